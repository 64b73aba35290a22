//! Flat `key=value` run configuration with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! preset=tiny
//! rdwt.kappa=4
//! conv.mk_kernels=16,32
//! ```
//!
//! `preset` is applied first wherever it appears; every other key overrides
//! one field of the preset. [`RunConfig::to_kv`] writes every field back out,
//! and parsing that output reproduces the configuration exactly.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{cfg_err, Error, Result};
use crate::rdwt::{default_anchors, EnsembleConfig, Granularity, Prototype, RdwtConfig, RegConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvConfig {
    pub f1: usize,
    pub depth: usize,
    /// Temporal kernel lengths run in parallel; `f1` filters are split across them.
    pub mk_kernels: Vec<usize>,
    pub sep_kernel: usize,
    pub pool: usize,
    pub dropout: f64,
}

impl ConvConfig {
    pub fn f2(&self) -> usize {
        self.f1 * self.depth
    }

    /// Filters per temporal kernel; the remainder goes to the first kernels.
    pub fn split(&self) -> Vec<usize> {
        let n = self.mk_kernels.len();
        (0..n)
            .map(|i| self.f1 / n + usize::from(i < self.f1 % n))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub h_q: usize,
    pub h_kv: usize,
    pub rope_base: f64,
    pub window_len: usize,
    pub window_stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnConfig {
    pub levels: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl TcnConfig {
    /// `1 + sum_level 2 (kernel - 1) 2^level`
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.levels)
            .map(|l| 2 * (self.kernel - 1) * (1 << l))
            .sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub classes: usize,
    /// Registered front-end name: `raw`, `rdwt` or `hybrid`.
    pub frontend: String,
    /// Registered attention name: `gqa` or `windowed`.
    pub attention: String,
    pub rdwt: RdwtConfig,
    pub ensemble: EnsembleConfig,
    pub reg: RegConfig,
    pub conv: ConvConfig,
    pub encoder: EncoderConfig,
    pub tcn: TcnConfig,
    pub se_gate: bool,
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.conv.f2()
    }

    pub fn d_k(&self) -> usize {
        self.d_model() / self.encoder.h_q.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.classes < 2 {
            return Err(cfg_err!("need at least one channel and two classes"));
        }
        self.rdwt.validate()?;
        self.ensemble.validate()?;
        self.reg.validate()?;
        let c = &self.conv;
        if c.f1 == 0 || c.depth == 0 || c.sep_kernel == 0 || c.pool == 0 {
            return Err(cfg_err!("conv sizes must be positive"));
        }
        if c.mk_kernels.is_empty() || c.mk_kernels.contains(&0) || c.mk_kernels.len() > c.f1 {
            return Err(cfg_err!(
                "conv.mk_kernels needs 1..={} positive lengths, got {:?}",
                c.f1,
                c.mk_kernels
            ));
        }
        for p in [c.dropout, self.tcn.dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(cfg_err!("dropout must lie in [0, 1), got {p}"));
            }
        }
        let e = &self.encoder;
        if e.h_q == 0 || e.h_kv == 0 || e.h_q % e.h_kv != 0 {
            return Err(cfg_err!("encoder.h_kv={} must divide encoder.h_q={}", e.h_kv, e.h_q));
        }
        if self.d_model() % e.h_q != 0 {
            return Err(cfg_err!("d_model={} not divisible by h_q={}", self.d_model(), e.h_q));
        }
        if self.d_k() % 2 != 0 {
            return Err(cfg_err!("head width d_k={} must be even for rotary phase", self.d_k()));
        }
        if !(e.rope_base > 0.0) {
            return Err(cfg_err!("encoder.rope_base must be positive"));
        }
        if e.window_len == 0 || e.window_stride == 0 {
            return Err(cfg_err!("encoder window length and stride must be positive"));
        }
        if self.tcn.levels == 0 || self.tcn.kernel == 0 {
            return Err(cfg_err!("tcn needs at least one level and a positive kernel"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub val_frac: f64,
    /// Smallest validation-loss decrease that counts as an improvement.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 1000,
            patience: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            val_frac: 0.2,
            min_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(cfg_err!("train.lr must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(cfg_err!("batch size and epoch budget must be positive"));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(cfg_err!(
                "train.patience={} must lie in [1, max_epochs={})",
                self.patience,
                self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(cfg_err!("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(cfg_err!("train.val_frac must lie in (0, 1)"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(cfg_err!("train.min_delta must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Default,
    Tiny,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Tiny => "tiny",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "tiny" => Ok(Preset::Tiny),
            other => Err(cfg_err!("unknown preset `{other}` (expected default or tiny)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Default)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let model = match p {
            Preset::Default => ModelConfig {
                channels: 3,
                classes: 2,
                frontend: "rdwt".into(),
                attention: "gqa".into(),
                rdwt: RdwtConfig::default(),
                ensemble: EnsembleConfig::default(),
                reg: RegConfig::default(),
                conv: ConvConfig {
                    f1: 16,
                    depth: 2,
                    mk_kernels: vec![16, 32, 64],
                    sep_kernel: 16,
                    pool: 8,
                    dropout: 0.3,
                },
                encoder: EncoderConfig {
                    h_q: 4,
                    h_kv: 2,
                    rope_base: 10000.0,
                    window_len: 32,
                    window_stride: 16,
                },
                tcn: TcnConfig {
                    levels: 2,
                    kernel: 4,
                    dropout: 0.3,
                },
                se_gate: false,
            },
            Preset::Tiny => {
                let mut m = Self::preset(Preset::Default).model;
                m.conv = ConvConfig {
                    f1: 4,
                    depth: 2,
                    mk_kernels: vec![16, 32],
                    sep_kernel: 8,
                    pool: 8,
                    dropout: 0.0,
                };
                m.encoder.h_q = 2;
                m.encoder.h_kv = 1;
                m.tcn.dropout = 0.0;
                m
            }
        };
        let mut train = TrainConfig::default();
        if p == Preset::Tiny {
            train.lr = 3e-3;
            train.batch_size = 32;
        }
        Self { preset: p, model, train }
    }

    pub fn tiny() -> Self {
        Self::preset(Preset::Tiny)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Parses a flat config; errors carry the 1-based line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            let lead = line.len() - line.trim_start().len();
            let body = line.trim_start();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let Some(eq) = body.find('=') else {
                return Err(at(ln + 1, lead + 1, "expected `key=value`"));
            };
            let key = body[..eq].trim();
            if key.is_empty() {
                return Err(at(ln + 1, lead + 1, "empty key"));
            }
            let vstart = eq + 1 + (body[eq + 1..].len() - body[eq + 1..].trim_start().len());
            entries.push((ln + 1, lead + 1, lead + vstart + 1, key.to_string(), body[eq + 1..].trim().to_string()));
        }

        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (line, kcol, vcol, key, value) in &entries {
            if !seen.insert(key.clone()) {
                return Err(at(*line, *kcol, &format!("duplicate key `{key}`")));
            }
            if key == "preset" {
                let p = value.parse::<Preset>().map_err(|e| at(*line, *vcol, &strip(e)))?;
                cfg = Self::preset(p);
            }
        }
        let anchors_set = entries.iter().any(|e| e.3 == "rdwt.anchors");
        for (line, kcol, vcol, key, value) in &entries {
            if key == "preset" {
                continue;
            }
            match cfg.set(key, value) {
                Ok(()) => {}
                Err(SetError::UnknownKey) => {
                    return Err(at(*line, *kcol, &format!("unknown key `{key}`")));
                }
                Err(SetError::Value(msg)) => {
                    return Err(at(*line, *vcol, &format!("bad value for `{key}`: {msg}")));
                }
            }
        }
        if !anchors_set && cfg.model.rdwt.anchors.len() != cfg.model.rdwt.levels {
            cfg.model.rdwt.anchors = if cfg.model.rdwt.s_max == 1.0 {
                vec![1.0; cfg.model.rdwt.levels]
            } else {
                default_anchors(cfg.model.rdwt.levels)
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), SetError> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model.channels" => m.channels = num(v)?,
            "model.classes" => m.classes = num(v)?,
            "model.frontend" => m.frontend = v.to_string(),
            "model.attention" => m.attention = v.to_string(),
            "model.se_gate" => m.se_gate = num(v)?,
            "rdwt.levels" => m.rdwt.levels = num(v)?,
            "rdwt.kappa" => m.rdwt.kappa = num(v)?,
            "rdwt.s_max" => m.rdwt.s_max = num(v)?,
            "rdwt.taps" => {
                m.rdwt.taps = match v {
                    "auto" => None,
                    _ => Some(num(v)?),
                }
            }
            "rdwt.eps_norm" => m.rdwt.eps_norm = num(v)?,
            "rdwt.p_lev" => m.rdwt.p_lev = num(v)?,
            "rdwt.granularity" => {
                m.rdwt.granularity = match v {
                    "per-batch" => Granularity::PerBatch,
                    "per-sample" => Granularity::PerSample,
                    _ => return Err(SetError::Value("expected per-batch or per-sample".into())),
                }
            }
            "rdwt.prototype" => {
                m.rdwt.prototype = match v {
                    "db4" => Prototype::Db4,
                    "identity" => Prototype::Identity,
                    _ => return Err(SetError::Value("expected db4 or identity".into())),
                }
            }
            "rdwt.anchors" => m.rdwt.anchors = list(v)?,
            "rdwt.theta_init" => m.rdwt.theta_init = num(v)?,
            "rdwt.alpha_init" => m.rdwt.alpha_init = num(v)?,
            "ensemble.branches" => m.ensemble.branches = num(v)?,
            "ensemble.p_branch" => m.ensemble.p_branch = num(v)?,
            "ensemble.jitter_sigma" => m.ensemble.jitter_sigma = num(v)?,
            "reg.lambda_bar" => m.reg.lambda_bar = num(v)?,
            "reg.lambda_z" => m.reg.lambda_z = num(v)?,
            "reg.lambda_spr" => m.reg.lambda_spr = num(v)?,
            "reg.k_barrier" => m.reg.k_barrier = num(v)?,
            "reg.gamma" => m.reg.gamma = num(v)?,
            "reg.lambda_proto" => m.reg.lambda_proto = num(v)?,
            "conv.f1" => m.conv.f1 = num(v)?,
            "conv.depth" => m.conv.depth = num(v)?,
            "conv.mk_kernels" => m.conv.mk_kernels = list(v)?,
            "conv.sep_kernel" => m.conv.sep_kernel = num(v)?,
            "conv.pool" => m.conv.pool = num(v)?,
            "conv.dropout" => m.conv.dropout = num(v)?,
            "encoder.h_q" => m.encoder.h_q = num(v)?,
            "encoder.h_kv" => m.encoder.h_kv = num(v)?,
            "encoder.rope_base" => m.encoder.rope_base = num(v)?,
            "encoder.window_len" => m.encoder.window_len = num(v)?,
            "encoder.window_stride" => m.encoder.window_stride = num(v)?,
            "tcn.levels" => m.tcn.levels = num(v)?,
            "tcn.kernel" => m.tcn.kernel = num(v)?,
            "tcn.dropout" => m.tcn.dropout = num(v)?,
            "train.lr" => t.lr = num(v)?,
            "train.batch_size" => t.batch_size = num(v)?,
            "train.max_epochs" => t.max_epochs = num(v)?,
            "train.patience" => t.patience = num(v)?,
            "train.seed" => t.seed = num(v)?,
            "train.beta1" => t.beta1 = num(v)?,
            "train.beta2" => t.beta2 = num(v)?,
            "train.adam_eps" => t.adam_eps = num(v)?,
            "train.val_frac" => t.val_frac = num(v)?,
            "train.min_delta" => t.min_delta = num(v)?,
            _ => return Err(SetError::UnknownKey),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in a stable order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let t = &self.train;
        let r = &m.rdwt;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let joinu = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let pairs: Vec<(&str, String)> = vec![
            ("preset", self.preset.name().into()),
            ("model.channels", m.channels.to_string()),
            ("model.classes", m.classes.to_string()),
            ("model.frontend", m.frontend.clone()),
            ("model.attention", m.attention.clone()),
            ("model.se_gate", m.se_gate.to_string()),
            ("rdwt.levels", r.levels.to_string()),
            ("rdwt.kappa", r.kappa.to_string()),
            ("rdwt.s_max", r.s_max.to_string()),
            ("rdwt.taps", r.taps.map_or("auto".into(), |k| k.to_string())),
            ("rdwt.eps_norm", r.eps_norm.to_string()),
            ("rdwt.p_lev", r.p_lev.to_string()),
            (
                "rdwt.granularity",
                match r.granularity {
                    Granularity::PerBatch => "per-batch".into(),
                    Granularity::PerSample => "per-sample".into(),
                },
            ),
            ("rdwt.prototype", r.prototype.name().into()),
            ("rdwt.anchors", join(&r.anchors)),
            ("rdwt.theta_init", r.theta_init.to_string()),
            ("rdwt.alpha_init", r.alpha_init.to_string()),
            ("ensemble.branches", m.ensemble.branches.to_string()),
            ("ensemble.p_branch", m.ensemble.p_branch.to_string()),
            ("ensemble.jitter_sigma", m.ensemble.jitter_sigma.to_string()),
            ("reg.lambda_bar", m.reg.lambda_bar.to_string()),
            ("reg.lambda_z", m.reg.lambda_z.to_string()),
            ("reg.lambda_spr", m.reg.lambda_spr.to_string()),
            ("reg.k_barrier", m.reg.k_barrier.to_string()),
            ("reg.gamma", m.reg.gamma.to_string()),
            ("reg.lambda_proto", m.reg.lambda_proto.to_string()),
            ("conv.f1", m.conv.f1.to_string()),
            ("conv.depth", m.conv.depth.to_string()),
            ("conv.mk_kernels", joinu(&m.conv.mk_kernels)),
            ("conv.sep_kernel", m.conv.sep_kernel.to_string()),
            ("conv.pool", m.conv.pool.to_string()),
            ("conv.dropout", m.conv.dropout.to_string()),
            ("encoder.h_q", m.encoder.h_q.to_string()),
            ("encoder.h_kv", m.encoder.h_kv.to_string()),
            ("encoder.rope_base", m.encoder.rope_base.to_string()),
            ("encoder.window_len", m.encoder.window_len.to_string()),
            ("encoder.window_stride", m.encoder.window_stride.to_string()),
            ("tcn.levels", m.tcn.levels.to_string()),
            ("tcn.kernel", m.tcn.kernel.to_string()),
            ("tcn.dropout", m.tcn.dropout.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.val_frac", t.val_frac.to_string()),
            ("train.min_delta", t.min_delta.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

enum SetError {
    UnknownKey,
    Value(String),
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, SetError>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| SetError::Value(e.to_string()))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, SetError>
where
    T::Err: Display,
{
    v.split(',').map(|s| num(s.trim())).collect()
}

fn at(line: usize, col: usize, msg: &str) -> Error {
    cfg_err!("line {line}, column {col}: {msg}")
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
