//! Convolutional feature block, attention encoder, causal TCN head and dense
//! classifier, plus the forward context they share with the front ends.

mod attention;
mod conv;
mod frontend;
mod tcn;

pub use attention::{gqa_attention, gqa_heads, rope_apply, windowed_attention, GqaAttention, WindowedAttention};
pub use conv::conv_block;
pub use frontend::{FrontOutput, HybridFrontEnd, RawFrontEnd, RdwtFrontEnd};
pub use tcn::tcn_forward;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{dim_err, Error, Result};
use crate::ndarr::{Graph, Mode, NormStats, Tensor, Var, BN_MOMENTUM};
use crate::params::{Binder, ParamStore};
use crate::registry::{attentions, frontends, Attention, FrontEnd};

/// Counters collected during one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub q_projections: usize,
    pub kv_projections: usize,
    pub zero_filters: usize,
    pub kept_branches: Vec<usize>,
}

/// Everything a layer needs while recording onto a graph: lazily bound
/// parameters, normalization buffers, mode and randomness.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    params: Binder<'a>,
    buffers: &'a mut ParamStore,
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
    pub stats: ForwardStats,
}

impl<'a> Ctx<'a> {
    pub fn new(
        g: &'a mut Graph,
        params: &'a ParamStore,
        buffers: &'a mut ParamStore,
        mode: Mode,
        rng: &'a mut ChaCha8Rng,
    ) -> Self {
        Self {
            g,
            params: Binder::new(params),
            buffers,
            mode,
            rng,
            stats: ForwardStats::default(),
        }
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        self.params.get(self.g, name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.store().contains(name)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    /// Batch normalization over `[N, F, T]` using `{name}.gamma/.beta` and the
    /// running buffers `{name}.mean/.var`.
    pub fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let (mk, vk) = (format!("{name}.mean"), format!("{name}.var"));
        match self.mode {
            Mode::Eval => {
                let mean = self.buffers.get(&mk)?.data().to_vec();
                let var = self.buffers.get(&vk)?.data().to_vec();
                let (y, _) = self
                    .g
                    .batch_norm(x, gamma, beta, NormStats::Running { mean: &mean, var: &var })?;
                Ok(y)
            }
            Mode::Train => {
                let (y, stats) = self.g.batch_norm(x, gamma, beta, NormStats::Batch)?;
                let stats = stats.expect("batch statistics in train mode");
                let bessel = stats.count as f64 / (stats.count as f64 - 1.0);
                for (r, m) in self.buffers.get_mut(&mk)?.data_mut().iter_mut().zip(&stats.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in self.buffers.get_mut(&vk)?.data_mut().iter_mut().zip(&stats.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * bessel;
                }
                Ok(y)
            }
        }
    }

    /// Inverted dropout; identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let n = self.g.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        self.g.mul_const(x, mask)
    }
}

pub(crate) fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("shape matches")
}

pub(crate) fn add_bn(params: &mut ParamStore, buffers: &mut ParamStore, name: &str, f: usize) {
    params.insert(format!("{name}.gamma"), Tensor::full(&[f], 1.0));
    params.insert(format!("{name}.beta"), Tensor::zeros(&[f]));
    buffers.insert(format!("{name}.mean"), Tensor::zeros(&[f]));
    buffers.insert(format!("{name}.var"), Tensor::full(&[f], 1.0));
}

/// Last time step of `[N, F, T]` through a dense layer: logits `[N, classes]`.
pub fn classify(ctx: &mut Ctx, x: Var) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    let [n, f, t] = shape[..] else {
        return Err(dim_err!("classifier expects [N, F, T], got {:?}", shape));
    };
    if t == 0 {
        return Err(dim_err!("classifier needs at least one time step"));
    }
    let last = ctx.g.narrow(x, 2, t - 1, 1)?;
    let last = ctx.g.reshape(last, &[n, f])?;
    let w = ctx.p("cls.w")?;
    let b = ctx.p("cls.b")?;
    let z = ctx.g.matmul(last, w)?;
    let classes = ctx.g.shape(w)[1];
    let b = ctx.g.reshape(b, &[1, classes])?;
    let b = ctx.g.broadcast_to(b, &[n, classes])?;
    ctx.g.add(z, b)
}

/// Per-feature sigmoid gate from time-averaged features of `[N, F, T]`.
pub fn se_gate(ctx: &mut Ctx, x: Var) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    let [n, f, _] = shape[..] else {
        return Err(dim_err!("gate expects [N, F, T], got {:?}", shape));
    };
    let pooled = ctx.g.mean_last(x)?;
    let pooled = ctx.g.reshape(pooled, &[n, f])?;
    let w = ctx.p("se.w")?;
    let b = ctx.p("se.b")?;
    let h = ctx.g.matmul(pooled, w)?;
    let b = ctx.g.reshape(b, &[1, f])?;
    let b = ctx.g.broadcast_to(b, &[n, f])?;
    let h = ctx.g.add(h, b)?;
    let gate = ctx.g.sigmoid(h);
    let gate = ctx.g.reshape(gate, &[n, f, 1])?;
    let gate = ctx.g.broadcast_to(gate, &shape)?;
    ctx.g.mul(x, gate)
}

/// Stage names in pipeline order, matching [`ForwardOutput::stage_times`].
pub const STAGES: [&str; 5] = ["rdwt", "conv", "attention", "tcn", "classifier"];

/// Logits plus the loss side terms recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub scale_reg: Option<Var>,
    pub proto_reg: Option<Var>,
    pub stats: ForwardStats,
    /// Wall time spent recording each stage.
    pub stage_times: [Duration; 5],
}

/// The full classifier: configuration, parameters, normalization buffers and
/// the front-end/attention strategies picked by name.
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
    frontend: Box<dyn FrontEnd>,
    attention: Box<dyn Attention>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("frontend", &self.frontend.name())
            .field("attention", &self.attention.name())
            .field("params", &self.params.numel())
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self::from_parts(self.cfg.clone(), self.params.clone(), self.buffers.clone())
            .expect("a valid model stays valid")
    }
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let frontend = frontends().create(&cfg.frontend)?;
        let attention = attentions().create(&cfg.attention)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        frontend.init(&cfg, &mut params, &mut rng)?;
        conv::init(&cfg, &mut params, &mut buffers, &mut rng);
        if cfg.se_gate {
            let f = cfg.d_model();
            params.insert("se.w", glorot(&mut rng, &[f, f], f, f));
            params.insert("se.b", Tensor::zeros(&[f]));
        }
        attention::init(&cfg, &mut params, &mut rng);
        tcn::init(&cfg, &mut params, &mut buffers, &mut rng);
        let f = cfg.d_model();
        params.insert("cls.w", glorot(&mut rng, &[f, cfg.classes], f, cfg.classes));
        params.insert("cls.b", Tensor::zeros(&[cfg.classes]));
        Ok(Self {
            cfg,
            params,
            buffers,
            frontend,
            attention,
        })
    }

    /// Rebuilds a model around stored tensors, checking names and shapes
    /// against a fresh initialization.
    pub fn from_parts(cfg: ModelConfig, params: ParamStore, buffers: ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        for (kind, want, got) in [("parameter", &m.params, &params), ("buffer", &m.buffers, &buffers)] {
            for (name, t) in want.iter() {
                let have = got
                    .get(name)
                    .map_err(|_| Error::Data(format!("missing {kind} `{name}`")))?;
                if have.shape() != t.shape() {
                    return Err(dim_err!(
                        "{kind} `{name}` has shape {:?}, model expects {:?}",
                        have.shape(),
                        t.shape()
                    ));
                }
            }
            if let Some(extra) = got.names().find(|n| !want.contains(n)) {
                return Err(Error::Data(format!("unexpected {kind} `{extra}`")));
            }
        }
        m.params = params;
        m.buffers = buffers;
        Ok(m)
    }

    pub fn frontend_name(&self) -> &'static str {
        self.frontend.name()
    }

    pub fn attention_name(&self) -> &'static str {
        self.attention.name()
    }

    /// Records a forward pass of `x: [N, C, T]`, updating normalization
    /// buffers in train mode.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<ForwardOutput> {
        let Self {
            cfg,
            params,
            buffers,
            frontend,
            attention,
        } = self;
        let mut ctx = Ctx::new(g, params, buffers, mode, rng);
        run(&mut ctx, cfg, frontend.as_ref(), attention.as_ref(), x)
    }

    /// Forward pass against an arbitrary parameter/buffer set with the same layout.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        buffers: &mut ParamStore,
        x: Var,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutput> {
        let mut ctx = Ctx::new(g, params, buffers, mode, rng);
        run(&mut ctx, &self.cfg, self.frontend.as_ref(), self.attention.as_ref(), x)
    }

    /// Eval-mode class probabilities for `x: [N, C, T]` or a single `[C, T]` trial.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let x = match x.rank() {
            2 => x.clone().reshape(&[1, x.shape()[0], x.shape()[1]])?,
            3 => x.clone(),
            _ => return Err(dim_err!("predict expects [C, T] or [N, C, T], got {:?}", x.shape())),
        };
        let mut g = Graph::new();
        let xv = g.constant(x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buffers = self.buffers.clone();
        let out = self.forward_with(&mut g, &self.params, &mut buffers, xv, Mode::Eval, &mut rng)?;
        let p = g.softmax(out.logits, 1)?;
        Ok(g.value(p).clone())
    }

    /// Parameter group used in gradient reports.
    pub fn group_of(name: &str) -> &'static str {
        let last = name.rsplit('.').next().unwrap_or(name);
        match name.split('.').next().unwrap_or("") {
            "rdwt" => match last {
                "z" => "z",
                "theta" => "theta",
                "alpha" => "alpha",
                "delta_low" | "delta_high" => "prototypes",
                "branch_logits" => "branch_logits",
                _ => "rdwt",
            },
            "fusion" => "eta",
            "conv" => "conv",
            "enc" => "attention",
            "tcn" => "tcn",
            _ => "classifier",
        }
    }
}

fn run(ctx: &mut Ctx, cfg: &ModelConfig, frontend: &dyn FrontEnd, attention: &dyn Attention, x: Var) -> Result<ForwardOutput> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != cfg.channels {
        return Err(dim_err!(
            "model expects [N, {}, T] input, got {:?}",
            cfg.channels,
            shape
        ));
    }
    let mut times = [Duration::ZERO; 5];
    let mut clock = Instant::now();
    let mut lap = |i: usize| {
        let now = Instant::now();
        times[i] = now - clock;
        clock = now;
    };
    let front = frontend.forward(ctx, cfg, x)?;
    lap(0);
    let mut h = conv_block(ctx, cfg, front.y)?;
    if cfg.se_gate {
        h = se_gate(ctx, h)?;
    }
    lap(1);
    let tokens = ctx.g.permute(h, &[0, 2, 1])?;
    let gain = ctx.p("enc.ln.gain")?;
    let bias = ctx.p("enc.ln.bias")?;
    let normed = ctx.g.layer_norm(tokens, gain, bias)?;
    let att = attention.forward(ctx, cfg, normed)?;
    let enc = ctx.g.add(tokens, att)?;
    let feat = ctx.g.permute(enc, &[0, 2, 1])?;
    lap(2);
    let feat = tcn_forward(ctx, cfg, feat)?;
    lap(3);
    let logits = classify(ctx, feat)?;
    lap(4);
    Ok(ForwardOutput {
        logits,
        scale_reg: front.scale_reg,
        proto_reg: front.proto_reg,
        stats: std::mem::take(&mut ctx.stats),
        stage_times: times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn probabilities_have_the_class_shape() {
        for classes in [2, 4] {
            let mut cfg = RunConfig::tiny().model;
            cfg.classes = classes;
            let m = Model::new(cfg, 1).unwrap();
            let x = Tensor::new(vec![3, 128], (0..384).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
            let p = m.predict(&x).unwrap();
            assert_eq!(p.shape(), &[1, classes]);
            assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let m = Model::new(RunConfig::tiny().model, 3).unwrap();
        let x = Tensor::new(vec![2, 3, 96], (0..576).map(|i| ((i * 31 % 17) as f64) / 9.0 - 1.0).collect()).unwrap();
        let a = m.predict(&x).unwrap();
        let b = m.predict(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut m = Model::new(RunConfig::tiny().model, 3).unwrap();
        for v in m.params.get_mut("cls.w").unwrap().data_mut() {
            *v = 0.0;
        }
        let x = Tensor::full(&[3, 64], 0.5);
        let p = m.predict(&x).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn classifier_reads_last_step() {
        let store = {
            let mut s = ParamStore::new();
            s.insert("cls.w", Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
            s.insert("cls.b", Tensor::zeros(&[2]));
            s
        };
        let mut buffers = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 3], vec![9.0, 9.0, 3f64.ln()]).unwrap());
        let mut ctx = Ctx::new(&mut g, &store, &mut buffers, Mode::Eval, &mut rng);
        let z = classify(&mut ctx, x).unwrap();
        let p = ctx.g.softmax(z, 1).unwrap();
        let p = ctx.g.value(p).data();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gate_is_optional() {
        let mut cfg = RunConfig::tiny().model;
        cfg.se_gate = true;
        let m = Model::new(cfg, 0).unwrap();
        assert!(m.params.contains("se.w"));
        let p = m.predict(&Tensor::full(&[3, 64], 0.1)).unwrap();
        assert_eq!(p.shape(), &[1, 2]);
        assert!(!Model::new(RunConfig::tiny().model, 0).unwrap().params.contains("se.w"));
    }

    #[test]
    fn layout_checked_on_restore() {
        let m = Model::new(RunConfig::tiny().model, 0).unwrap();
        let mut cfg5 = RunConfig::tiny().model;
        cfg5.channels = 5;
        let err = Model::from_parts(cfg5, m.params.clone(), m.buffers.clone()).unwrap_err();
        assert!(err.to_string().contains("conv.spatial"), "{err}");
        let mut p = m.params.clone();
        p.insert("extra", Tensor::scalar(1.0));
        assert!(Model::from_parts(m.cfg.clone(), p, m.buffers.clone()).is_err());
    }

    #[test]
    fn input_layout_is_checked() {
        let m = Model::new(RunConfig::tiny().model, 0).unwrap();
        assert!(m.predict(&Tensor::zeros(&[5, 128])).is_err());
        assert!(m.predict(&Tensor::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn groups_cover_every_parameter() {
        let mut cfg = RunConfig::tiny().model;
        cfg.frontend = "hybrid".into();
        cfg.ensemble.branches = 2;
        let m = Model::new(cfg, 0).unwrap();
        let mut groups: Vec<&str> = m.params.names().map(|n| Model::group_of(n)).collect();
        groups.sort();
        groups.dedup();
        assert_eq!(
            groups,
            ["alpha", "attention", "branch_logits", "classifier", "conv", "eta", "prototypes", "tcn", "theta", "z"]
        );
    }
}
