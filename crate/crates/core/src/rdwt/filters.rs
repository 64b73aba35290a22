use super::RdwtConfig;
use crate::error::Result;
use crate::ndarr::{Graph, Var};

/// `v / (||v||_1 + eps)`. Returns the normalized filter and whether it was all
/// zero (in which case the output is zero rather than a division by zero).
pub fn l1_normalize(g: &mut Graph, v: Var, eps: f64) -> (Var, bool) {
    let a = g.abs(v);
    let norm = g.sum(a);
    let zero = g.value(norm).data()[0] == 0.0;
    let denom = g.add_scalar(norm, eps);
    if g.value(denom).data()[0] == 0.0 {
        return (g.scale(v, 0.0), true);
    }
    let inv = g.recip(denom);
    (g.mul_scalar(v, inv).expect("single-valued scale"), zero)
}

/// Stretches `proto` by the single-valued scale `s` onto `k` taps and
/// l1-normalizes the result.
pub fn resample_filter(g: &mut Graph, proto: Var, s: Var, k: usize, eps: f64) -> Result<(Var, bool)> {
    let raw = g.resample(proto, s, k)?;
    Ok(l1_normalize(g, raw, eps))
}

/// Per-level analysis filters of one branch.
#[derive(Clone, Debug)]
pub struct FilterBank {
    pub low: Vec<Var>,
    pub high: Vec<Var>,
    pub scales: Var,
    /// Levels whose resampled filters collapsed to zero.
    pub zero_filters: usize,
}

impl FilterBank {
    pub fn levels(&self) -> usize {
        self.low.len()
    }
}

pub fn build_filter_bank(
    g: &mut Graph,
    scales: Var,
    proto_low: Var,
    proto_high: Var,
    cfg: &RdwtConfig,
) -> Result<FilterBank> {
    let k = cfg.taps();
    let mut bank = FilterBank {
        low: Vec::with_capacity(cfg.levels),
        high: Vec::with_capacity(cfg.levels),
        scales,
        zero_filters: 0,
    };
    for l in 0..cfg.levels {
        let s = g.gather(scales, &[l])?;
        let (lo, zl) = resample_filter(g, proto_low, s, k, cfg.eps_norm)?;
        let (hi, zh) = resample_filter(g, proto_high, s, k, cfg.eps_norm)?;
        bank.zero_filters += usize::from(zl) + usize::from(zh);
        bank.low.push(lo);
        bank.high.push(hi);
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndarr::Tensor;
    use crate::rdwt::DB4_LOW;

    fn resampled(proto: &[f64], s: f64, k: usize, eps: f64) -> Vec<f64> {
        let mut g = Graph::new();
        let p = g.constant(Tensor::from_vec(proto.to_vec()));
        let sv = g.constant(Tensor::scalar(s));
        let (v, _) = resample_filter(&mut g, p, sv, k, eps).unwrap();
        g.value(v).data().to_vec()
    }

    /// Straight-line interpolation written out independently: stretch about
    /// the centre, sample at unit spacing, zero outside the support.
    fn oracle(proto: &[f64], s: f64, k: usize, eps: f64) -> Vec<f64> {
        let centre_in = (proto.len() - 1) as f64 / 2.0;
        let centre_out = (k - 1) as f64 / 2.0;
        let raw: Vec<f64> = (0..k)
            .map(|j| {
                let pos = centre_in + (j as f64 - centre_out) / s;
                if pos < 0.0 || pos > (proto.len() - 1) as f64 {
                    return 0.0;
                }
                let left = pos.floor();
                let right = pos.ceil();
                if left == right {
                    return proto[left as usize];
                }
                let (y0, y1) = (proto[left as usize], proto[right as usize]);
                y0 + (y1 - y0) * (pos - left) / (right - left)
            })
            .collect();
        let norm: f64 = raw.iter().map(|v| v.abs()).sum::<f64>() + eps;
        raw.iter().map(|v| v / norm).collect()
    }

    #[test]
    fn unstretched_is_plain_l1_normalization() {
        let v = resampled(&[1.0, 1.0, 2.0], 1.0, 3, 1e-8);
        for (a, b) in v.iter().zip([0.25, 0.25, 0.5]) {
            assert!((a - b).abs() < 1e-8);
        }
        let v = resampled(&DB4_LOW, 1.0, 8, 0.0);
        let norm: f64 = DB4_LOW.iter().map(|v| v.abs()).sum();
        for (a, b) in v.iter().zip(DB4_LOW) {
            assert!((a - b / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn db4_stretched_matches_golden() {
        // frozen from an external straight-line interpolation script
        const GOLDEN: [f64; 12] = [
            0.0,
            0.004479032446060794,
            0.013081085888443466,
            0.012533974916876205,
            -0.0313922501565692,
            -0.06452617010386966,
            -0.021904060570857024,
            0.12117214795873577,
            0.259218066740472,
            0.28171901728205834,
            0.18997418991639434,
            0.0,
        ];
        let got = resampled(&DB4_LOW, 1.5, 12, 1e-8);
        let indep = oracle(&DB4_LOW, 1.5, 12, 1e-8);
        for ((g, o), want) in got.iter().zip(&indep).zip(GOLDEN) {
            assert!((g - want).abs() < 1e-14, "{g} vs {want}");
            assert!((o - want).abs() < 1e-14);
        }
    }

    #[test]
    fn resampled_filters_have_unit_l1_norm() {
        for s in [1.0, 1.3, 5.0 / 3.0, 2.7, 4.0] {
            let v = resampled(&DB4_LOW, s, 32, 1e-8);
            let norm: f64 = v.iter().map(|x| x.abs()).sum();
            assert!((norm - 1.0).abs() < 1e-7, "s={s}: {norm}");
            let exact = resampled(&DB4_LOW, s, 32, 0.0);
            let norm: f64 = exact.iter().map(|x| x.abs()).sum();
            assert!((norm - 1.0).abs() < 1e-9);
            let want = oracle(&DB4_LOW, s, 32, 1e-8);
            for (a, b) in v.iter().zip(want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_prototype_normalizes_to_zero() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::zeros(&[3]));
        let s = g.constant(Tensor::scalar(1.0));
        let (v, zero) = resample_filter(&mut g, p, s, 3, 0.0).unwrap();
        assert!(zero);
        assert_eq!(g.value(v).data(), &[0.0, 0.0, 0.0]);
        let (v, zero) = resample_filter(&mut g, p, s, 3, 1e-8).unwrap();
        assert!(zero);
        assert_eq!(g.value(v).data(), &[0.0, 0.0, 0.0]);
        assert!(g.value(v).all_finite());
    }
}
