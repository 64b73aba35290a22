//! Dense `f64` arrays with a reverse-mode tape.
//!
//! Every forward pass records onto a fresh [`Graph`]; [`Graph::backward`]
//! replays the tape in reverse once and yields gradients for the leaves that
//! were created with `requires_grad`.

mod backward;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use backward::Gradients;
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradReport, TensorCheck};
pub use graph::{
    elu, sigmoid, softplus, BatchStats, ConvSpec, Graph, NormStats, Padding, Var, BN_MOMENTUM,
    NORM_EPS,
};
pub use tensor::Tensor;

use crate::error::Result;

/// Whether stochastic layers are active and normalization reads batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Depthwise/grouped "same" convolution; see [`Graph::conv1d`] for the tap alignment.
pub fn conv1d_same(g: &mut Graph, x: Var, kernels: Var, groups: usize) -> Result<Var> {
    g.conv1d(x, kernels, ConvSpec::same(groups))
}

pub fn softmax(g: &mut Graph, x: Var, axis: usize) -> Result<Var> {
    g.softmax(x, axis)
}

pub fn avg_pool_time(g: &mut Graph, x: Var, window: usize) -> Result<Var> {
    g.avg_pool_last(x, window)
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential update with [`BN_MOMENTUM`]; the running variance takes the
    /// unbiased batch estimate.
    pub fn update(&mut self, stats: &BatchStats) {
        let bessel = stats.count as f64 / (stats.count as f64 - 1.0);
        for (r, m) in self.mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.var.iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * bessel;
        }
    }
}

/// Batch normalization over `[N, F, T]`. Train mode normalizes by batch
/// statistics and folds them into `state`; eval mode reads `state` only.
pub fn batchnorm(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<Var> {
    match mode {
        Mode::Train => {
            let (y, stats) = g.batch_norm(x, gamma, beta, NormStats::Batch)?;
            if let Some(stats) = stats {
                state.update(&stats);
            }
            Ok(y)
        }
        Mode::Eval => {
            let (y, _) = g.batch_norm(
                x,
                gamma,
                beta,
                NormStats::Running {
                    mean: &state.mean,
                    var: &state.var,
                },
            )?;
            Ok(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    fn conv(x: &[f64], k: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.constant(t(x).reshape(&[1, x.len()]).unwrap());
        let kv = g.constant(t(k).reshape(&[1, k.len()]).unwrap());
        let y = conv1d_same(&mut g, xv, kv, 1).unwrap();
        g.value(y).data().to_vec()
    }

    /// Direct summation with the documented alignment `y[t] = sum_i w[i] x[t + floor((K-1)/2) - i]`.
    fn conv_oracle(x: &[f64], k: &[f64]) -> Vec<f64> {
        let off = (k.len() as isize - 1) / 2;
        (0..x.len() as isize)
            .map(|t| {
                (0..k.len() as isize)
                    .filter_map(|i| {
                        let j = t + off - i;
                        (0..x.len() as isize)
                            .contains(&j)
                            .then(|| k[i as usize] * x[j as usize])
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn delta_kernel_is_identity() {
        assert_eq!(conv(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn even_kernel_alignment_matches_direct_sum() {
        let got = conv(&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(got, conv_oracle(&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0]));
        // frozen: ceil((K-1)/2) taps look back for even K
        assert_eq!(got, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        assert!(conv(&[0.0; 9], &[0.3, -1.2, 4.0, 0.5]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_bad_groups() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 8]));
        let k = g.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(conv1d_same(&mut g, x, k, 2), Err(Error::Config(_))));
        let k2 = g.constant(Tensor::zeros(&[3, 2, 3]));
        assert!(matches!(conv1d_same(&mut g, x, k2, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[0.0, 0.0]));
        let s = softmax(&mut g, a, 0).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let b = g.constant(t(&[1000.0, 0.0]));
        let s = softmax(&mut g, b, 0).unwrap();
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-12);
        assert!(g.value(s).all_finite());

        let c = g.constant(t(&[1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let s = softmax(&mut g, c, 0).unwrap();
        for (got, want) in g.value(s).data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }

        let e = g.constant(Tensor::zeros(&[0]));
        assert!(softmax(&mut g, e, 0).is_err());
    }

    #[test]
    fn softplus_and_elu_closed_forms() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        let tiny = softplus(-50.0);
        assert!(tiny > 0.0 && (tiny - (-50f64).exp()).abs() < 1e-30);
        assert_eq!(elu(2.0), 2.0);
        assert_eq!(elu(0.0), 0.0);
        assert!((elu(-1.0) - ((-1f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_examples() {
        let mut g = Graph::new();
        let gamma = g.constant(Tensor::full(&[1], 1.0));
        let beta = g.constant(Tensor::full(&[1], 0.25));
        let mut state = BatchNormState::new(1);

        let x = g.constant(Tensor::full(&[4, 1, 3], 7.0));
        let y = batchnorm(&mut g, x, gamma, beta, &mut state, Mode::Train).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let beta0 = g.constant(Tensor::zeros(&[1]));
        let x = g.constant(Tensor::new(vec![2, 1, 1], vec![-1.0, 1.0]).unwrap());
        let y = batchnorm(&mut g, x, gamma, beta0, &mut BatchNormState::new(1), Mode::Train)
            .unwrap();
        let want = 1.0 / (1.0 + NORM_EPS).sqrt();
        assert!((g.value(y).data()[0] + want).abs() < 1e-15);
        assert!((g.value(y).data()[1] - want).abs() < 1e-15);

        // fresh statistics (0, 1) in eval mode
        let x = g.constant(Tensor::new(vec![1, 1, 2], vec![-1.0, 1.0]).unwrap());
        let y = batchnorm(&mut g, x, gamma, beta0, &mut BatchNormState::new(1), Mode::Eval)
            .unwrap();
        assert!((g.value(y).data()[1] - want).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_updates_running_stats() {
        let mut g = Graph::new();
        let gamma = g.constant(Tensor::full(&[1], 1.0));
        let beta = g.constant(Tensor::zeros(&[1]));
        let x = g.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 3.0]).unwrap());
        let mut state = BatchNormState::new(1);
        batchnorm(&mut g, x, gamma, beta, &mut state, Mode::Train).unwrap();
        assert!((state.mean[0] - 0.2).abs() < 1e-15);
        // unbiased batch variance 2.0
        assert!((state.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn avg_pool_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1.0, 2.0, 3.0, 4.0]));
        let p = avg_pool_time(&mut g, a, 2).unwrap();
        assert_eq!(g.value(p).data(), &[1.5, 3.5]);
        let a = g.constant(t(&[5.0; 8]));
        let p = avg_pool_time(&mut g, a, 8).unwrap();
        assert_eq!(g.value(p).data(), &[5.0]);
        let a = g.constant(t(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        let p = avg_pool_time(&mut g, a, 2).unwrap();
        assert_eq!(g.value(p).data(), &[1.5, 3.5]);
        let a = g.constant(t(&[1.0, 2.0]));
        assert!(matches!(avg_pool_time(&mut g, a, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);

        let mut g = Graph::new();
        let th = g.leaf(t(&[0.0]), true);
        let sp = g.softplus(th);
        let grads = g.backward(sp).unwrap();
        assert_eq!(grads.get(th).unwrap().data(), &[0.5]);
    }

    #[test]
    fn unused_leaf_gets_exact_zero() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.0, 2.0]), true);
        let unused = g.leaf(t(&[5.0, 6.0, 7.0]), true);
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_contracts() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn grad_check_cubic() {
        let mut params = crate::params::ParamStore::new();
        params.insert("x", t(&[2.0]));
        let f = |g: &mut Graph, p: &crate::params::ParamStore| {
            let x = g.param("x", p.get("x")?.clone());
            let x2 = g.mul(x, x)?;
            let x3 = g.mul(x2, x)?;
            Ok(g.sum(x3))
        };
        let report = grad_check(f, &params, &["x".to_string()], &GradCheckConfig::default()).unwrap();
        let c = &report.tensors[0];
        assert!((c.analytic - 12.0).abs() < 1e-12);
        assert!((c.numeric - 12.0).abs() < 1e-6);
        assert!(report.passed());
    }

    #[test]
    fn grad_check_rejects_nondeterminism() {
        use std::cell::Cell;
        let mut params = crate::params::ParamStore::new();
        params.insert("x", t(&[1.0]));
        let calls = Cell::new(0.0);
        let f = |g: &mut Graph, p: &crate::params::ParamStore| {
            calls.set(calls.get() + 1.0);
            let x = g.param("x", p.get("x")?.clone());
            let y = g.add_scalar(x, calls.get());
            Ok(g.sum(y))
        };
        let err = grad_check(f, &params, &["x".to_string()], &GradCheckConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
