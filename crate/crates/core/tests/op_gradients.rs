//! Every taped operation against central differences over 100 seeded random
//! shapes and values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdwt_core::ndarr::{grad_check, ConvSpec, GradCheckConfig, Graph, NormStats, Tensor, Var};
use rdwt_core::params::ParamStore;
use rdwt_core::Result;

const SEEDS: u64 = 100;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Builds `sum(op(inputs) * w)` with a fixed random weighting `w` and checks
/// every input.
fn check<F>(label: &str, seed: u64, inputs: Vec<Tensor>, op: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut params = ParamStore::new();
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("in{i}")).collect();
    for (n, t) in names.iter().zip(inputs) {
        params.insert(n.clone(), t);
    }
    let weight_seed = seed ^ 0x5eed;
    let f = |g: &mut Graph, p: &ParamStore| -> Result<Var> {
        let vars: Vec<Var> = names
            .iter()
            .map(|n| Ok(g.param(n, p.get(n)?.clone())))
            .collect::<Result<_>>()?;
        let y = op(g, &vars)?;
        let mut wr = ChaCha8Rng::seed_from_u64(weight_seed);
        let shape = g.shape(y).to_vec();
        let w = g.constant(rand_tensor(&mut wr, &shape, -1.0, 1.0));
        let yw = g.mul(y, w)?;
        Ok(g.sum(yw))
    };
    let report = grad_check(f, &params, &names, &GradCheckConfig::default()).unwrap();
    assert!(
        report.passed(),
        "{label} seed {seed}: {:?}",
        report.tensors
    );
}

fn for_seeds(mut body: impl FnMut(u64, &mut ChaCha8Rng)) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        body(seed, &mut rng);
    }
}

/// Values bounded away from zero, for ops with a kink or pole there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.1, 2.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

#[test]
fn elementwise_binary() {
    for_seeds(|seed, rng| {
        let shape = [rng.random_range(1..4), rng.random_range(1..5)];
        let a = rand_tensor(rng, &shape, -2.0, 2.0);
        let b = rand_tensor(rng, &shape, -2.0, 2.0);
        check("add", seed, vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
        check("sub", seed, vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
        check("mul", seed, vec![a.clone(), b], |g, v| g.mul(v[0], v[1]));
        let s = rand_tensor(rng, &[1], -2.0, 2.0);
        check("mul_scalar", seed, vec![a.clone(), s], |g, v| g.mul_scalar(v[0], v[1]));
        let m: Vec<f64> = (0..a.len()).map(|i| (i % 2) as f64 * 1.5).collect();
        check("mul_const", seed, vec![a.clone()], |g, v| g.mul_const(v[0], m.clone()));
        check("scale", seed, vec![a.clone()], |g, v| Ok(g.scale(v[0], -0.7)));
        check("add_scalar", seed, vec![a], |g, v| Ok(g.add_scalar(v[0], 3.0)));
    });
}

#[test]
fn elementwise_unary() {
    for_seeds(|seed, rng| {
        let shape = [rng.random_range(1..6)];
        let x = rand_tensor(rng, &shape, -3.0, 3.0);
        check("exp", seed, vec![x.clone()], |g, v| Ok(g.exp(v[0])));
        check("sigmoid", seed, vec![x.clone()], |g, v| Ok(g.sigmoid(v[0])));
        check("softplus", seed, vec![x.clone()], |g, v| Ok(g.softplus(v[0])));
        check("square", seed, vec![x], |g, v| Ok(g.square(v[0])));
        let nz = away_from_zero(rng, &shape);
        check("abs", seed, vec![nz.clone()], |g, v| Ok(g.abs(v[0])));
        check("elu", seed, vec![nz.clone()], |g, v| Ok(g.elu(v[0])));
        check("recip", seed, vec![nz], |g, v| Ok(g.recip(v[0])));
        let pos = rand_tensor(rng, &shape, 0.2, 3.0);
        check("ln", seed, vec![pos], |g, v| Ok(g.ln(v[0])));
    });
}

#[test]
fn reductions_and_layout() {
    for_seeds(|seed, rng| {
        let shape = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5)];
        let x = rand_tensor(rng, &shape, -2.0, 2.0);
        check("sum", seed, vec![x.clone()], |g, v| Ok(g.sum(v[0])));
        check("mean_last", seed, vec![x.clone()], |g, v| g.mean_last(v[0]));
        check("permute", seed, vec![x.clone()], |g, v| g.permute(v[0], &[2, 0, 1]));
        let flat: usize = shape.iter().product();
        check("reshape", seed, vec![x.clone()], |g, v| g.reshape(v[0], &[flat]));
        let axis = rng.random_range(0..3);
        let start = rng.random_range(0..shape[axis]);
        let len = rng.random_range(1..=shape[axis] - start);
        check("narrow", seed, vec![x.clone()], |g, v| g.narrow(v[0], axis, start, len));
        check("pad", seed, vec![x.clone()], |g, v| g.pad(v[0], axis, 1, shape[axis] + 3));
        let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..flat)).collect();
        check("gather", seed, vec![x.clone()], |g, v| g.gather(v[0], &idx));
        let y = rand_tensor(rng, &[shape[0], 2, shape[2]], -1.0, 1.0);
        check("concat", seed, vec![x.clone(), y], |g, v| g.concat(&[v[0], v[1]], 1));
        let b = rand_tensor(rng, &[shape[1], 1], -1.0, 1.0);
        check("broadcast", seed, vec![b], |g, v| g.broadcast_to(v[0], &shape));
        let w = rng.random_range(1..=shape[2]);
        check("avg_pool", seed, vec![x], |g, v| g.avg_pool_last(v[0], w));
    });
}

#[test]
fn convolution() {
    for_seeds(|seed, rng| {
        let groups = rng.random_range(1..3);
        let c_in = groups * rng.random_range(1..3);
        let c_out = groups * rng.random_range(1..3);
        let k = rng.random_range(1..6);
        let t = rng.random_range(k..k + 8);
        let x = rand_tensor(rng, &[2, c_in, t], -1.0, 1.0);
        let w = rand_tensor(rng, &[c_out, c_in / groups, k], -1.0, 1.0);
        let same = ConvSpec::same(groups);
        check("conv same", seed, vec![x.clone(), w.clone()], |g, v| g.conv1d(v[0], v[1], same));
        let causal = ConvSpec {
            groups,
            dilation: rng.random_range(1..4),
            padding: rdwt_core::ndarr::Padding::Causal,
        };
        check("conv causal", seed, vec![x, w], |g, v| g.conv1d(v[0], v[1], causal));
    });
}

#[test]
fn products_and_softmax() {
    for_seeds(|seed, rng| {
        let (m, k, p) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let a = rand_tensor(rng, &[2, m, k], -1.0, 1.0);
        let b = rand_tensor(rng, &[k, p], -1.0, 1.0);
        check("matmul", seed, vec![a.clone(), b], |g, v| g.matmul(v[0], v[1]));
        let b = rand_tensor(rng, &[2, k, p], -1.0, 1.0);
        check("bmm", seed, vec![a.clone(), b], |g, v| g.batch_matmul(v[0], v[1], false));
        let bt = rand_tensor(rng, &[2, p, k], -1.0, 1.0);
        check("bmm^T", seed, vec![a.clone(), bt], |g, v| g.batch_matmul(v[0], v[1], true));
        let axis = rng.random_range(0..3);
        check("softmax", seed, vec![a], |g, v| g.softmax(v[0], axis));
        let d = 2 * rng.random_range(1..4);
        let len = rng.random_range(1..6);
        let r = rand_tensor(rng, &[2, len, d], -1.0, 1.0);
        check("rope", seed, vec![r], |g, v| g.rope(v[0], 10000.0));
        let logits = rand_tensor(rng, &[3, p + 1], -2.0, 2.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..p + 1)).collect();
        check("cross_entropy", seed, vec![logits], |g, v| g.cross_entropy(v[0], &labels));
    });
}

#[test]
fn normalization() {
    for_seeds(|seed, rng| {
        let (n, f, t) = (rng.random_range(1..4), rng.random_range(1..3), rng.random_range(2..5));
        let x = rand_tensor(rng, &[n, f, t], -2.0, 2.0);
        let gm = rand_tensor(rng, &[f], 0.5, 1.5);
        let bt = rand_tensor(rng, &[f], -0.5, 0.5);
        check("bn batch", seed, vec![x.clone(), gm.clone(), bt.clone()], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], NormStats::Batch)?.0)
        });
        let mean: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..f).map(|_| rng.random_range(0.5..2.0)).collect();
        check("bn running", seed, vec![x.clone(), gm, bt], |g, v| {
            Ok(g
                .batch_norm(v[0], v[1], v[2], NormStats::Running { mean: &mean, var: &var })?
                .0)
        });
        let gain = rand_tensor(rng, &[t], 0.5, 1.5);
        let bias = rand_tensor(rng, &[t], -0.5, 0.5);
        check("layer_norm", seed, vec![x, gain, bias], |g, v| g.layer_norm(v[0], v[1], v[2]));
    });
}

#[test]
fn wavelet_primitives() {
    for_seeds(|seed, rng| {
        let len = rng.random_range(1..8);
        let d = away_from_zero(rng, &[len]);
        // keep |d| clear of the threshold kink
        let tau = Tensor::scalar(0.05);
        check("soft_threshold", seed, vec![d, tau], |g, v| g.soft_threshold(v[0], v[1]));
        let k0 = rng.random_range(2..7);
        let proto = rand_tensor(rng, &[k0], -1.0, 1.0);
        let s = Tensor::scalar(rng.random_range(1.0..4.0));
        let k = rng.random_range(k0..4 * k0);
        check("resample", seed, vec![proto, s], |g, v| g.resample(v[0], v[1], k));
    });
}
