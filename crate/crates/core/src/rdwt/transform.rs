use rand::Rng;

use super::filters::{build_filter_bank, FilterBank};
use super::{scales, Granularity, RdwtConfig};
use crate::error::{cfg_err, dim_err, Result};
use crate::ndarr::{ConvSpec, Graph, Mode, Tensor, Var};

/// Which detail bands survive level-dropout. One row shared by the whole
/// batch, or one row per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelMasks {
    levels: usize,
    rows: Vec<Vec<bool>>,
}

pub(crate) enum LevelState {
    On,
    Off,
    PerSample(Vec<bool>),
}

impl LevelMasks {
    pub fn all_on(levels: usize) -> Self {
        Self {
            levels,
            rows: vec![vec![true; levels]],
        }
    }

    pub fn shared(row: Vec<bool>) -> Self {
        Self {
            levels: row.len(),
            rows: vec![row],
        }
    }

    pub fn per_sample(rows: Vec<Vec<bool>>) -> Result<Self> {
        let levels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != levels) {
            return Err(dim_err!("ragged level masks"));
        }
        Ok(Self { levels, rows })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn is_all_on(&self) -> bool {
        self.rows.iter().flatten().all(|&m| m)
    }

    pub(crate) fn state(&self, level: usize) -> LevelState {
        let col: Vec<bool> = self.rows.iter().map(|r| r[level]).collect();
        if col.iter().all(|&m| m) {
            LevelState::On
        } else if col.iter().all(|&m| !m) {
            LevelState::Off
        } else {
            LevelState::PerSample(col)
        }
    }
}

/// Draws level-dropout masks. Eval mode keeps every level; survivors are not
/// rescaled.
pub fn level_masks<R: Rng>(
    levels: usize,
    p_lev: f64,
    granularity: Granularity,
    mode: Mode,
    batch: usize,
    rng: &mut R,
) -> Result<LevelMasks> {
    if !(0.0..1.0).contains(&p_lev) {
        return Err(cfg_err!("level-dropout probability must lie in [0, 1), got {p_lev}"));
    }
    if mode == Mode::Eval || p_lev == 0.0 {
        return Ok(LevelMasks::all_on(levels));
    }
    let mut draw = || (0..levels).map(|_| rng.random_bool(1.0 - p_lev)).collect::<Vec<_>>();
    match granularity {
        Granularity::PerBatch => Ok(LevelMasks::shared(draw())),
        Granularity::PerSample => LevelMasks::per_sample((0..batch).map(|_| draw()).collect()),
    }
}

/// Approximation `a^(L)` plus detail bands `d^(1..L)`, each shaped like the input.
#[derive(Clone, Debug)]
pub struct SubbandStack {
    pub approx: Var,
    pub details: Vec<Var>,
    pub masks: LevelMasks,
}

/// Undecimated analysis of `x: [C, T]` or `[N, C, T]`; every channel is
/// filtered with the same per-level low/high pair.
pub fn analyze(g: &mut Graph, x: Var, bank: &FilterBank) -> Result<SubbandStack> {
    let shape = g.shape(x).to_vec();
    let t = *shape.last().ok_or_else(|| dim_err!("analyze on rank-0 input"))?;
    if !(2..=3).contains(&shape.len()) {
        return Err(dim_err!("analyze expects [C, T] or [N, C, T], got {:?}", shape));
    }
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let levels = bank.levels();
    if let Some(&first) = bank.low.first() {
        let k = g.shape(first)[0];
        if t < k {
            return Err(dim_err!("signal length {t} shorter than filter length {k}"));
        }
    }
    let mut approx = g.reshape(x, &[rows, 1, t])?;
    let mut details = Vec::with_capacity(levels);
    for l in 0..levels {
        let k = g.shape(bank.low[l])[0];
        let lo = g.reshape(bank.low[l], &[1, 1, k])?;
        let hi = g.reshape(bank.high[l], &[1, 1, k])?;
        let d = g.conv1d(approx, hi, ConvSpec::same(1))?;
        details.push(g.reshape(d, &shape)?);
        approx = g.conv1d(approx, lo, ConvSpec::same(1))?;
    }
    let approx = g.reshape(approx, &shape)?;
    Ok(SubbandStack {
        approx,
        details,
        masks: LevelMasks::all_on(levels),
    })
}

/// Soft threshold with a single-valued `tau`.
pub fn shrink(g: &mut Graph, d: Var, tau: Var) -> Result<Var> {
    g.soft_threshold(d, tau)
}

/// `y = a^(L) + sum_l m_l * alpha_l * shrink(d^(l), tau_l)` with `alpha, tau: [L]`.
pub fn synthesize(g: &mut Graph, stack: &SubbandStack, alpha: Var, tau: Var) -> Result<Var> {
    let levels = stack.details.len();
    if stack.masks.levels() != levels {
        return Err(dim_err!(
            "{} level masks for {} detail bands",
            stack.masks.levels(),
            levels
        ));
    }
    if g.value(alpha).len() != levels || g.value(tau).len() != levels {
        return Err(dim_err!("alpha and tau need {levels} entries"));
    }
    let shape = g.shape(stack.approx).to_vec();
    let mut y = stack.approx;
    for (l, &d) in stack.details.iter().enumerate() {
        if g.shape(d) != shape.as_slice() {
            return Err(dim_err!("detail band {l} shape {:?} != {:?}", g.shape(d), shape));
        }
        let state = stack.masks.state(l);
        if matches!(state, LevelState::Off) {
            continue;
        }
        let tl = g.gather(tau, &[l])?;
        let al = g.gather(alpha, &[l])?;
        let sh = shrink(g, d, tl)?;
        let mut term = g.mul_scalar(sh, al)?;
        if let LevelState::PerSample(col) = state {
            if col.len() != shape[0] || shape.len() != 3 {
                return Err(dim_err!("per-sample masks need a [N, C, T] batch of {}", col.len()));
            }
            let per: usize = shape[1..].iter().product();
            let m = col
                .iter()
                .flat_map(|&keep| std::iter::repeat_n(if keep { 1.0 } else { 0.0 }, per))
                .collect();
            term = g.mul_const(term, m)?;
        }
        y = g.add(y, term)?;
    }
    Ok(y)
}

/// Trainable tensors of one branch as bound on the current graph.
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub z: Var,
    pub theta: Var,
    pub alpha: Var,
    pub proto_low: Var,
    pub proto_high: Var,
}

/// Scales, filter bank, analysis and synthesis for one branch. `z_jitter`
/// perturbs the logits on the forward path only.
pub fn branch_forward(
    g: &mut Graph,
    x: Var,
    vars: &BranchVars,
    cfg: &RdwtConfig,
    masks: LevelMasks,
    z_jitter: Option<&[f64]>,
) -> Result<(Var, SubbandStack, FilterBank)> {
    let z = match z_jitter {
        Some(noise) => {
            let n = g.constant(Tensor::from_vec(noise.to_vec()));
            g.add(vars.z, n)?
        }
        None => vars.z,
    };
    let s = scales(g, z, cfg.kappa, cfg.s_max)?;
    let bank = build_filter_bank(g, s, vars.proto_low, vars.proto_high, cfg)?;
    let mut stack = analyze(g, x, &bank)?;
    stack.masks = masks;
    let tau = g.softplus(vars.theta);
    let y = synthesize(g, &stack, vars.alpha, tau)?;
    Ok((y, stack, bank))
}

/// Plain-value subbands of one branch with fixed scales, thresholds and gains.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub approx: Tensor,
    /// Raw detail bands before shrinkage.
    pub details: Vec<Tensor>,
    pub reconstruction: Tensor,
}

/// Eval-mode analysis and synthesis of `x: [C, T]` or `[N, C, T]` outside
/// any training graph.
pub fn decompose(x: &Tensor, cfg: &RdwtConfig, scales: &[f64], tau: &[f64], alpha: &[f64]) -> Result<Decomposition> {
    let levels = cfg.levels;
    for (what, v) in [("scales", scales), ("thresholds", tau), ("gains", alpha)] {
        if v.len() != levels {
            return Err(dim_err!("{} {what} for {levels} levels", v.len()));
        }
    }
    if let Some(s) = scales.iter().find(|s| !(**s >= 1.0 && **s <= cfg.s_max)) {
        return Err(cfg_err!("scale {s} outside [1, {}]", cfg.s_max));
    }
    if tau.iter().any(|t| !(*t >= 0.0)) {
        return Err(cfg_err!("thresholds must be non-negative"));
    }
    let (low, high) = cfg.prototype.filters();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let s = g.constant(Tensor::from_vec(scales.to_vec()));
    let pl = g.constant(Tensor::from_vec(low));
    let ph = g.constant(Tensor::from_vec(high));
    let bank = build_filter_bank(&mut g, s, pl, ph, cfg)?;
    let stack = analyze(&mut g, xv, &bank)?;
    let a = g.constant(Tensor::from_vec(alpha.to_vec()));
    let t = g.constant(Tensor::from_vec(tau.to_vec()));
    let y = synthesize(&mut g, &stack, a, t)?;
    Ok(Decomposition {
        approx: g.value(stack.approx).clone(),
        details: stack.details.iter().map(|d| g.value(*d).clone()).collect(),
        reconstruction: g.value(y).clone(),
    })
}
