//! Trainable undecimated wavelet front end with learned rational dilations.
//!
//! Each level `l` owns a scale `s_l = 1 + (s_max - 1) * sigmoid(z_l / kappa)`.
//! Low/high prototypes are stretched by `s_l`, l1-normalized, and applied
//! depthwise without decimation; details are soft-thresholded, scaled and
//! added back onto the final approximation.

mod ensemble;
mod filters;
mod regularize;
mod transform;

pub use ensemble::{ensemble_forward, hybrid_fuse, EnsembleConfig, EnsembleOutput, EnsembleVars};
pub use filters::{build_filter_bank, l1_normalize, resample_filter, FilterBank};
pub use regularize::{prototype_penalty, regularize, RegConfig};
pub use transform::{
    analyze, branch_forward, decompose, level_masks, Decomposition, shrink, synthesize, BranchVars, LevelMasks,
    SubbandStack,
};

use crate::error::{cfg_err, Result};
use crate::ndarr::{sigmoid, Graph, Var};

/// Daubechies-4 decomposition low-pass filter (8 taps).
pub const DB4_LOW: [f64; 8] = [
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.23037781330885523,
];

/// Daubechies-4 decomposition high-pass filter (quadrature mirror of [`DB4_LOW`]).
pub const DB4_HIGH: [f64; 8] = [
    -0.23037781330885523,
    0.7148465705525415,
    -0.6308807679295904,
    -0.02798376941698385,
    0.18703481171888114,
    0.030841381835986965,
    -0.032883011666982945,
    -0.010597401784997278,
];

#[derive(Clone, Debug, PartialEq)]
pub enum Prototype {
    Db4,
    /// Centred delta low-pass and zero high-pass; reconstructs the input
    /// exactly when scales are pinned at 1 and `eps_norm = 0`.
    Identity,
    Custom { low: Vec<f64>, high: Vec<f64> },
}

impl Prototype {
    pub fn filters(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Prototype::Db4 => (DB4_LOW.to_vec(), DB4_HIGH.to_vec()),
            Prototype::Identity => (vec![0.0, 1.0, 0.0], vec![0.0; 3]),
            Prototype::Custom { low, high } => (low.clone(), high.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Prototype::Db4 => "db4",
            Prototype::Identity => "identity",
            Prototype::Custom { .. } => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    PerSample,
    PerBatch,
}

/// Hyperparameters of one wavelet branch.
#[derive(Clone, Debug, PartialEq)]
pub struct RdwtConfig {
    pub levels: usize,
    pub kappa: f64,
    pub s_max: f64,
    /// Resampled filter length; `None` means `ceil(K0 * s_max)`.
    pub taps: Option<usize>,
    pub eps_norm: f64,
    pub p_lev: f64,
    pub granularity: Granularity,
    pub prototype: Prototype,
    /// Initial scales; `z` starts at their logits.
    pub anchors: Vec<f64>,
    pub theta_init: f64,
    pub alpha_init: f64,
}

impl Default for RdwtConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            kappa: 4.0,
            s_max: 4.0,
            taps: None,
            eps_norm: 1e-8,
            p_lev: 0.1,
            granularity: Granularity::PerBatch,
            prototype: Prototype::Db4,
            anchors: default_anchors(4),
            theta_init: -3.0,
            alpha_init: 1.0,
        }
    }
}

impl RdwtConfig {
    /// Delta/zero prototypes, unit scales and no normalization floor: the
    /// front end passes its input through unchanged.
    pub fn identity() -> Self {
        Self {
            s_max: 1.0,
            eps_norm: 0.0,
            prototype: Prototype::Identity,
            anchors: vec![1.0; 4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (low, high) = self.prototype.filters();
        if self.levels == 0 {
            return Err(cfg_err!("rdwt needs at least one level"));
        }
        if !(self.kappa > 0.0) {
            return Err(cfg_err!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.s_max >= 1.0) {
            return Err(cfg_err!("s_max must be >= 1, got {}", self.s_max));
        }
        if low.len() < 2 || low.len() != high.len() {
            return Err(cfg_err!(
                "prototypes need equal lengths >= 2, got {} and {}",
                low.len(),
                high.len()
            ));
        }
        if !(0.0..1.0).contains(&self.p_lev) {
            return Err(cfg_err!("p_lev must lie in [0, 1), got {}", self.p_lev));
        }
        if !(self.eps_norm >= 0.0) {
            return Err(cfg_err!("eps_norm must be non-negative"));
        }
        if self.anchors.len() != self.levels {
            return Err(cfg_err!(
                "{} anchors for {} levels",
                self.anchors.len(),
                self.levels
            ));
        }
        if self.taps == Some(0) {
            return Err(cfg_err!("taps must be >= 1"));
        }
        anchor_logits(&self.anchors, self.kappa, self.s_max).map(|_| ())
    }

    pub fn prototype_len(&self) -> usize {
        self.prototype.filters().0.len()
    }

    pub fn taps(&self) -> usize {
        self.taps
            .unwrap_or_else(|| (self.prototype_len() as f64 * self.s_max).ceil() as usize)
    }

    pub fn z_mu(&self) -> Result<Vec<f64>> {
        anchor_logits(&self.anchors, self.kappa, self.s_max)
    }
}

/// Rational seeds `(2l + 1) / (l + 1)`: 3/2, 5/3, 7/4, 9/5, ...
pub fn default_anchors(levels: usize) -> Vec<f64> {
    (1..=levels)
        .map(|l| (2 * l + 1) as f64 / (l + 1) as f64)
        .collect()
}

/// `1 + (s_max - 1) * sigmoid(z / kappa)`
pub fn scale_of(z: f64, kappa: f64, s_max: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(cfg_err!("kappa must be positive, got {kappa}"));
    }
    if !(s_max >= 1.0) {
        return Err(cfg_err!("s_max must be >= 1, got {s_max}"));
    }
    Ok(1.0 + (s_max - 1.0) * sigmoid(z / kappa))
}

/// Taped tempered logistic map over a vector of logits.
pub fn scales(g: &mut Graph, z: Var, kappa: f64, s_max: f64) -> Result<Var> {
    scale_of(0.0, kappa, s_max)?;
    let zs = g.scale(z, 1.0 / kappa);
    let sg = g.sigmoid(zs);
    let sc = g.scale(sg, s_max - 1.0);
    Ok(g.add_scalar(sc, 1.0))
}

/// Logits that map onto the given scales. With `s_max == 1` every scale is 1
/// and the logits are zero.
pub fn anchor_logits(targets: &[f64], kappa: f64, s_max: f64) -> Result<Vec<f64>> {
    scale_of(0.0, kappa, s_max)?;
    if s_max == 1.0 {
        return Ok(vec![0.0; targets.len()]);
    }
    targets
        .iter()
        .map(|&s| {
            let p = (s - 1.0) / (s_max - 1.0);
            if !(p > 0.0 && p < 1.0) {
                return Err(cfg_err!("anchor scale {s} outside (1, {s_max})"));
            }
            Ok(kappa * (p / (1.0 - p)).ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndarr::Tensor;

    #[test]
    fn scale_examples() {
        assert_eq!(scale_of(0.0, 1.0, 4.0).unwrap(), 2.5);
        assert!((scale_of(1e3, 1.0, 4.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((scale_of(-1e3, 1.0, 4.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(scale_of(0.0, 0.0, 4.0).is_err());
        assert!(scale_of(0.0, -1.0, 4.0).is_err());
    }

    #[test]
    fn seed_inversion_round_trips() {
        let z = anchor_logits(&[1.5], 1.0, 4.0).unwrap()[0];
        assert!((z + 5f64.ln()).abs() < 1e-12);
        assert!((scale_of(z, 1.0, 4.0).unwrap() - 1.5).abs() < 1e-12);

        let cfg = RdwtConfig::default();
        let zs = cfg.z_mu().unwrap();
        for (z, s) in zs.iter().zip(&cfg.anchors) {
            assert!((scale_of(*z, cfg.kappa, cfg.s_max).unwrap() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn default_anchors_are_the_rational_seeds() {
        let a = default_anchors(4);
        let want = [1.5, 5.0 / 3.0, 7.0 / 4.0, 9.0 / 5.0];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn default_taps_cover_largest_stretch() {
        assert_eq!(RdwtConfig::default().taps(), 32);
        assert_eq!(RdwtConfig::identity().taps(), 3);
    }

    #[test]
    fn taped_scales_match_plain_map() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![-3.0, 0.0, 2.0]));
        let s = scales(&mut g, z, 4.0, 4.0).unwrap();
        for (zv, sv) in [-3.0, 0.0, 2.0].iter().zip(g.value(s).data()) {
            assert_eq!(*sv, scale_of(*zv, 4.0, 4.0).unwrap());
        }
    }

    #[test]
    fn db4_pair_is_a_quadrature_mirror() {
        let sum: f64 = DB4_LOW.iter().sum();
        assert!((sum - 2f64.sqrt()).abs() < 1e-12);
        for (i, h) in DB4_HIGH.iter().enumerate() {
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            assert_eq!(*h, sign * DB4_LOW[7 - i]);
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = RdwtConfig::default();
        c.p_lev = 1.0;
        assert!(c.validate().is_err());
        let mut c = RdwtConfig::default();
        c.kappa = 0.0;
        assert!(c.validate().is_err());
        let mut c = RdwtConfig::default();
        c.anchors.pop();
        assert!(c.validate().is_err());
        RdwtConfig::default().validate().unwrap();
        RdwtConfig::identity().validate().unwrap();
    }
}
