//! Loss assembly, the Adam training loop with early stopping, evaluation
//! metrics and checkpoints.

mod adam;
mod checkpoint;
mod gradsuite;
mod metrics;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradsuite::{model_gradcheck, GroupCheck, GRAD_GROUPS};
pub use metrics::{cohen_kappa, micro_accuracy, ConfusionMatrix, Kappa};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{ForwardOutput, Model};
use crate::config::{Preset, RunConfig, TrainConfig};
use crate::data::TrialSet;
use crate::error::{data_err, Result};
use crate::ndarr::{Graph, Mode, Var};

/// Trials per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub reg: Option<Var>,
    pub proto: Option<Var>,
}

/// Mean cross-entropy plus whatever regularizers the front end recorded.
pub fn total_loss(g: &mut Graph, out: &ForwardOutput, labels: &[usize]) -> Result<LossTerms> {
    if labels.is_empty() {
        return Err(data_err!("empty batch"));
    }
    let ce = g.cross_entropy(out.logits, labels)?;
    let mut total = ce;
    for term in [out.scale_reg, out.proto_reg].into_iter().flatten() {
        total = g.add(total, term)?;
    }
    Ok(LossTerms {
        total,
        ce,
        reg: out.scale_reg,
        proto: out.proto_reg,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_kappa: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_acc,val_kappa";

/// Shortest round-trip decimal for every float, so equal histories give equal files.
pub fn write_history(mut w: impl Write, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_acc, r.val_kappa)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub cm: ConfusionMatrix,
    pub accuracy: f64,
    pub kappa: Kappa,
}

/// Eval-mode loss (including regularizers), confusion matrix, accuracy and kappa.
pub fn evaluate(model: &Model, set: &TrialSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(data_err!("cannot evaluate on an empty set"));
    }
    let classes = model.cfg.classes;
    if set.classes > classes {
        return Err(data_err!("data has {} classes, model predicts {classes}", set.classes));
    }
    let mut cm = ConfusionMatrix::new(classes);
    let mut loss = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buffers = model.buffers.clone();
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = set.batch(chunk)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = model.forward_with(&mut g, &model.params, &mut buffers, xv, Mode::Eval, &mut rng)?;
        let terms = total_loss(&mut g, &out, &labels)?;
        loss += g.value(terms.total).item()? * chunk.len() as f64;
        let logits = g.value(out.logits).data();
        for (r, &truth) in labels.iter().enumerate() {
            let row = &logits[r * classes..][..classes];
            let pred = (0..classes).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            cm.record(truth, pred)?;
        }
    }
    Ok(Evaluation {
        loss: loss / set.len() as f64,
        accuracy: micro_accuracy(&cm)?,
        kappa: cohen_kappa(&cm)?,
        cm,
    })
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// State at the best epoch; the model is left holding the same weights.
    pub checkpoint: Checkpoint,
}

/// Trains `model` in place with Adam, shuffling each epoch from `cfg.seed`,
/// and stops once validation loss has not improved by more than
/// `cfg.min_delta` for `cfg.patience` epochs. The best epoch's weights are
/// restored before returning.
pub fn fit(
    model: &mut Model,
    train: &TrialSet,
    val: &TrialSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(data_err!(
            "training needs non-empty splits (train {}, validation {})",
            train.len(),
            val.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let snapshot = |model: &Model, adam: &Adam, rng: &ChaCha8Rng, epoch, loss| Checkpoint {
        config: RunConfig {
            preset: Preset::Default,
            model: model.cfg.clone(),
            train: cfg.clone(),
        },
        params: model.params.clone(),
        buffers: model.buffers.clone(),
        adam: adam.clone(),
        epoch,
        best_val_loss: loss,
        rng: RngState::capture(rng),
    };
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = train.batch(chunk)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv, Mode::Train, &mut rng)?;
            let terms = total_loss(&mut g, &out, &labels)?;
            sum += g.value(terms.total).item()? * chunk.len() as f64;
            let mut grads = g.backward(terms.total)?;
            let grads = g.param_grads(&mut grads);
            adam.step(&mut model.params, &grads)?;
        }
        let ev = evaluate(model, val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss: ev.loss,
            val_acc: ev.accuracy,
            val_kappa: ev.kappa.value,
        };
        on_epoch(&rec);
        history.push(rec);

        let improved = best.as_ref().is_none_or(|b| ev.loss < b.best_val_loss - cfg.min_delta);
        if improved {
            best = Some(snapshot(model, &adam, &rng, epoch, ev.loss));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }

    let checkpoint = best.expect("at least one epoch ran");
    model.params = checkpoint.params.clone();
    model.buffers = checkpoint.buffers.clone();
    Ok(FitOutcome {
        history,
        best_epoch: checkpoint.epoch,
        best_val_loss: checkpoint.best_val_loss,
        stopped_early,
        checkpoint,
    })
}
