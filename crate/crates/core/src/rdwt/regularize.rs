use crate::error::{cfg_err, Result};
use crate::ndarr::{Graph, Tensor, Var};

/// Weights of the scale regularizer and of the prototype-deviation penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct RegConfig {
    pub lambda_bar: f64,
    pub lambda_z: f64,
    pub lambda_spr: f64,
    pub k_barrier: f64,
    pub gamma: f64,
    pub lambda_proto: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            lambda_bar: 1e-3,
            lambda_z: 1e-3,
            lambda_spr: 1e-3,
            k_barrier: 10.0,
            gamma: 2.0,
            lambda_proto: 1e-3,
        }
    }
}

impl RegConfig {
    pub fn off() -> Self {
        Self {
            lambda_bar: 0.0,
            lambda_z: 0.0,
            lambda_spr: 0.0,
            lambda_proto: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_bar", self.lambda_bar),
            ("lambda_z", self.lambda_z),
            ("lambda_spr", self.lambda_spr),
            ("lambda_proto", self.lambda_proto),
        ] {
            if !(v >= 0.0) {
                return Err(cfg_err!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.k_barrier > 0.0) || !(self.gamma > 0.0) {
            return Err(cfg_err!("k_barrier and gamma must be positive"));
        }
        Ok(())
    }
}

/// Boundary barrier on the scales, anchor pull on the logits and pairwise
/// spread over ordered pairs `l != j`.
pub fn regularize(
    g: &mut Graph,
    z: Var,
    z_mu: &[f64],
    s: Var,
    s_max: f64,
    cfg: &RegConfig,
) -> Result<Var> {
    let levels = g.value(s).len();
    let k = cfg.k_barrier;

    let lo = g.add_scalar(s, -1.0);
    let lo = g.scale(lo, -k);
    let lo = g.exp(lo);
    let hi = g.scale(s, k);
    let hi = g.add_scalar(hi, -k * s_max);
    let hi = g.exp(hi);
    let bar = g.add(lo, hi)?;
    let bar = g.sum(bar);
    let mut total = g.scale(bar, cfg.lambda_bar);

    let mu = g.constant(Tensor::from_vec(z_mu.to_vec()));
    let dz = g.sub(z, mu)?;
    let dz = g.square(dz);
    let dz = g.sum(dz);
    let anchor = g.scale(dz, cfg.lambda_z);
    total = g.add(total, anchor)?;

    if levels > 1 {
        let (left, right): (Vec<usize>, Vec<usize>) = (0..levels)
            .flat_map(|l| (0..levels).filter(move |&j| j != l).map(move |j| (l, j)))
            .unzip();
        let a = g.gather(s, &left)?;
        let b = g.gather(s, &right)?;
        let d = g.sub(a, b)?;
        let d = g.abs(d);
        let d = g.scale(d, -cfg.gamma);
        let d = g.exp(d);
        let spr = g.sum(d);
        let spr = g.scale(spr, cfg.lambda_spr);
        total = g.add(total, spr)?;
    }
    Ok(total)
}

/// `lambda * (||delta_low||^2 + ||delta_high||^2)` on the learned deviations
/// from the frozen prototypes.
pub fn prototype_penalty(g: &mut Graph, delta_low: Var, delta_high: Var, lambda: f64) -> Var {
    let a = g.square(delta_low);
    let a = g.sum(a);
    let b = g.square(delta_high);
    let b = g.sum(b);
    let t = g.add(a, b).expect("scalars");
    g.scale(t, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdwt::{anchor_logits, scales};

    fn eval(s_vals: &[f64], s_max: f64, cfg: &RegConfig) -> f64 {
        let kappa = 4.0;
        let zs = anchor_logits(s_vals, kappa, s_max).unwrap();
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(zs.clone()));
        let s = scales(&mut g, z, kappa, s_max).unwrap();
        let r = regularize(&mut g, z, &zs, s, s_max, cfg).unwrap();
        g.value(r).item().unwrap()
    }

    fn only(bar: f64, z: f64, spr: f64, k: f64, gamma: f64) -> RegConfig {
        RegConfig {
            lambda_bar: bar,
            lambda_z: z,
            lambda_spr: spr,
            k_barrier: k,
            gamma,
            lambda_proto: 0.0,
        }
    }

    #[test]
    fn equal_scales_count_ordered_pairs() {
        let v = eval(&[2.0; 4], 4.0, &only(0.0, 0.0, 1.0, 10.0, 2.0));
        assert!((v - 12.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_term_vanishes_at_anchor() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![0.3, -1.2]));
        let s = scales(&mut g, z, 4.0, 4.0).unwrap();
        let r = regularize(&mut g, z, &[0.3, -1.2], s, 4.0, &only(0.0, 1.0, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(g.value(r).item().unwrap(), 0.0);
    }

    #[test]
    fn matches_golden_sum() {
        // frozen from an external summation script
        let s = [1.5, 5.0 / 3.0, 7.0 / 4.0, 9.0 / 5.0];
        let v = eval(&s, 4.0, &only(1.0, 1.0, 1.0, 1.0, 1.0));
        assert!((v - 12.661998418649407).abs() < 1e-12, "{v}");
        let bar = eval(&s, 4.0, &only(1.0, 0.0, 0.0, 1.0, 1.0));
        assert!((bar - 2.436902645015964).abs() < 1e-12);
    }

    #[test]
    fn spread_falls_and_barrier_rises_toward_edges() {
        let spread = |gap: f64| eval(&[2.0, 2.0 + gap], 4.0, &only(0.0, 0.0, 1.0, 10.0, 2.0));
        let mut prev = spread(0.05);
        for gap in [0.1, 0.3, 0.6, 1.0, 1.5] {
            let v = spread(gap);
            assert!(v < prev);
            prev = v;
        }
        let barrier = |s: f64| eval(&[s], 4.0, &only(1.0, 0.0, 0.0, 10.0, 2.0));
        assert!(barrier(1.5) > barrier(2.0));
        assert!(barrier(1.1) > barrier(1.5));
        assert!(barrier(3.5) > barrier(3.0));
        assert!(barrier(3.9) > barrier(3.5));
    }

    #[test]
    fn prototype_penalty_is_scaled_energy() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0, -2.0]));
        let b = g.constant(Tensor::from_vec(vec![0.5]));
        let p = prototype_penalty(&mut g, a, b, 0.1);
        assert!((g.value(p).item().unwrap() - 0.525).abs() < 1e-15);
    }
}
