use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::filters::FilterBank;
use super::transform::{branch_forward, level_masks, BranchVars, SubbandStack};
use super::RdwtConfig;
use crate::error::{cfg_err, dim_err, Result};
use crate::ndarr::{Graph, Mode, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub branches: usize,
    pub p_branch: f64,
    pub jitter_sigma: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            branches: 1,
            p_branch: 0.1,
            jitter_sigma: 0.05,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 {
            return Err(cfg_err!("ensemble needs at least one branch"));
        }
        if !(0.0..1.0).contains(&self.p_branch) {
            return Err(cfg_err!("p_branch must lie in [0, 1), got {}", self.p_branch));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(cfg_err!("jitter_sigma must be non-negative"));
        }
        Ok(())
    }
}

/// Bound branch parameters plus the fusion logits `[B]`.
#[derive(Clone, Debug)]
pub struct EnsembleVars {
    pub branches: Vec<BranchVars>,
    pub logits: Var,
}

/// Fused front-end output plus per-branch intermediates.
#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    pub y: Var,
    /// Indices of the branches that contributed.
    pub kept: Vec<usize>,
    pub stacks: Vec<SubbandStack>,
    pub banks: Vec<FilterBank>,
}

impl EnsembleOutput {
    pub fn zero_filters(&self) -> usize {
        self.banks.iter().map(|b| b.zero_filters).sum()
    }
}

pub fn ensemble_forward<R: Rng>(
    g: &mut Graph,
    x: Var,
    vars: &EnsembleVars,
    rcfg: &RdwtConfig,
    ecfg: &EnsembleConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<EnsembleOutput> {
    let nb = vars.branches.len();
    if nb == 0 {
        return Err(cfg_err!("ensemble needs at least one branch"));
    }
    if g.value(vars.logits).len() != nb {
        return Err(dim_err!("{} fusion logits for {nb} branches", g.value(vars.logits).len()));
    }
    let shape = g.shape(x).to_vec();
    let batch = if shape.len() == 3 { shape[0] } else { 1 };
    let train = mode == Mode::Train;

    let mut kept: Vec<usize> = if train && nb > 1 && ecfg.p_branch > 0.0 {
        (0..nb).filter(|_| rng.random_bool(1.0 - ecfg.p_branch)).collect()
    } else {
        (0..nb).collect()
    };
    if kept.is_empty() {
        kept.push(rng.random_range(0..nb));
    }

    let noise = if train && ecfg.jitter_sigma > 0.0 {
        Some(Normal::new(0.0, ecfg.jitter_sigma).map_err(|e| cfg_err!("jitter: {e}"))?)
    } else {
        None
    };

    let mut outs = Vec::with_capacity(kept.len());
    let mut stacks = Vec::with_capacity(kept.len());
    let mut banks = Vec::with_capacity(kept.len());
    for &b in &kept {
        let jitter: Option<Vec<f64>> = noise
            .as_ref()
            .map(|n| (0..rcfg.levels).map(|_| n.sample(rng)).collect());
        let masks = level_masks(rcfg.levels, rcfg.p_lev, rcfg.granularity, mode, batch, rng)?;
        let (y, stack, bank) = branch_forward(g, x, &vars.branches[b], rcfg, masks, jitter.as_deref())?;
        outs.push(y);
        stacks.push(stack);
        banks.push(bank);
    }

    let y = if nb == 1 {
        outs[0]
    } else {
        let logits = g.gather(vars.logits, &kept)?;
        let w = g.softmax(logits, 0)?;
        let mut acc: Option<Var> = None;
        for (i, &o) in outs.iter().enumerate() {
            let wi = g.gather(w, &[i])?;
            let term = g.mul_scalar(o, wi)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        acc.expect("at least one branch")
    };
    Ok(EnsembleOutput { y, kept, stacks, banks })
}

/// `softmax(eta)[0] * x + softmax(eta)[1] * y`
pub fn hybrid_fuse(g: &mut Graph, x: Var, y: Var, eta: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(dim_err!("hybrid fusion of {:?} and {:?}", g.shape(x), g.shape(y)));
    }
    if g.value(eta).len() != 2 {
        return Err(dim_err!("fusion needs two logits"));
    }
    let beta = g.softmax(eta, 0)?;
    let b_raw = g.gather(beta, &[0])?;
    let b_rdwt = g.gather(beta, &[1])?;
    let a = g.mul_scalar(x, b_raw)?;
    let b = g.mul_scalar(y, b_rdwt)?;
    g.add(a, b)
}
