//! Reference computations and probes shared by several suites.

use rdwt_core::backbone::rope_apply;
use rdwt_core::ndarr::{Graph, Tensor};
use rdwt_core::params::ParamStore;

/// Expands counts to pairs, then scores the pairs with no matrix in sight.
pub fn brute_force_scores(rows: &[Vec<u64>]) -> (f64, f64) {
    let mut pairs = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), c as usize));
        }
    }
    let n = pairs.len() as f64;
    let k = rows.len();
    let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n;
    let chance: f64 = (0..k)
        .map(|c| {
            let truth = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
            let pred = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
            truth * pred / (n * n)
        })
        .sum();
    let kappa = if chance == 1.0 { 0.0 } else { (agree - chance) / (1.0 - chance) };
    (agree, kappa)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotates `v` as if it sat at position `m` of a sequence.
pub fn rotated(v: &[f64], m: usize, base: f64) -> Vec<f64> {
    let d = v.len();
    let mut rows = vec![0.0; (m + 1) * d];
    rows[m * d..].copy_from_slice(v);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![m + 1, d], rows).unwrap());
    let y = rope_apply(&mut g, x, base).unwrap();
    g.value(y).data()[m * d..].to_vec()
}

/// Textbook multi-head attention with explicit loops and its own rotary phase.
pub fn mha_oracle(x: &Tensor, p: &ParamStore, h: usize, base: f64) -> Vec<f64> {
    let [n, t, d] = x.shape()[..] else { unreachable!() };
    let dk = d / h;
    let w = |name: &str| p.get(name).unwrap().clone();
    let (wq, wk, wv, wo) = (w("enc.wq"), w("enc.wk"), w("enc.wv"), w("enc.wo"));
    let proj = |wm: &Tensor, b: usize, s: usize, col0: usize| -> Vec<f64> {
        let cols = wm.shape()[1];
        (0..dk)
            .map(|c| (0..d).map(|i| x.data()[(b * t + s) * d + i] * wm.data()[i * cols + col0 + c]).sum())
            .collect()
    };
    let rot = |v: Vec<f64>, m: usize| -> Vec<f64> {
        let mut out = v.clone();
        for i in 0..dk / 2 {
            let ang = m as f64 * base.powf(-2.0 * i as f64 / dk as f64);
            let (c, s) = (ang.cos(), ang.sin());
            out[2 * i] = v[2 * i] * c - v[2 * i + 1] * s;
            out[2 * i + 1] = v[2 * i] * s + v[2 * i + 1] * c;
        }
        out
    };
    let mut y = vec![0.0; n * t * d];
    for b in 0..n {
        let mut cat = vec![vec![0.0; h * dk]; t];
        for hd in 0..h {
            let q: Vec<Vec<f64>> = (0..t).map(|s| rot(proj(&wq, b, s, hd * dk), s)).collect();
            let k: Vec<Vec<f64>> = (0..t).map(|s| rot(proj(&wk, b, s, hd * dk), s)).collect();
            let v: Vec<Vec<f64>> = (0..t).map(|s| proj(&wv, b, s, hd * dk)).collect();
            for i in 0..t {
                let sc: Vec<f64> = (0..t)
                    .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let mx = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = sc.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dk {
                    cat[i][hd * dk + c] = (0..t).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        for i in 0..t {
            for o in 0..d {
                y[(b * t + i) * d + o] = (0..h * dk).map(|c| cat[i][c] * wo.data()[c * d + o]).sum();
            }
        }
    }
    y
}
