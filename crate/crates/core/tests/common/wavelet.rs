//! Single-branch wavelet helpers shared by the property and acceptance suites.

use rdwt_core::ndarr::{Graph, Tensor, Var};
use rdwt_core::params::ParamStore;
use rdwt_core::rdwt::{branch_forward, BranchVars, LevelMasks, RdwtConfig};
use rdwt_core::Result;

use super::{rng, uniform};

pub fn branch_params(cfg: &RdwtConfig, theta: f64, jitter: f64) -> ParamStore {
    let (low, high) = cfg.prototype.filters();
    let mut p = ParamStore::new();
    let z: Vec<f64> = cfg.z_mu().unwrap().iter().enumerate().map(|(i, z)| z + jitter * (1.0 + i as f64)).collect();
    p.insert("z", Tensor::from_vec(z));
    p.insert("theta", Tensor::from_vec(vec![theta; cfg.levels]));
    p.insert("alpha", Tensor::from_vec((0..cfg.levels).map(|l| 1.0 - 0.15 * l as f64).collect()));
    p.insert("low", Tensor::from_vec(low));
    p.insert("high", Tensor::from_vec(high));
    p
}

pub fn bind(g: &mut Graph, p: &ParamStore) -> BranchVars {
    let mut get = |n: &str| g.param(n, p.get(n).unwrap().clone());
    BranchVars {
        z: get("z"),
        theta: get("theta"),
        alpha: get("alpha"),
        proto_low: get("low"),
        proto_high: get("high"),
    }
}

pub fn transform(x: &Tensor, cfg: &RdwtConfig, p: &ParamStore) -> Tensor {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars = bind(&mut g, p);
    let (y, _, _) = branch_forward(&mut g, xv, &vars, cfg, LevelMasks::all_on(cfg.levels), None).unwrap();
    g.value(y).clone()
}

/// `x[.., t - n]`, zero-filled at the start.
pub fn delay(x: &Tensor, n: usize) -> Tensor {
    let t = *x.shape().last().unwrap();
    let data = x
        .data()
        .chunks(t)
        .flat_map(|row| (0..t).map(move |i| if i >= n { row[i - n] } else { 0.0 }))
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

pub fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(uniform(&mut rng(seed), &shape, -1.0, 1.0));
    let yw = g.mul(y, w)?;
    Ok(g.sum(yw))
}

pub fn names(p: &ParamStore) -> Vec<String> {
    p.names().cloned().collect()
}
