use super::graph::{sigmoid, rotate, Graph, Op, Unary, Var};
use super::kernels::{self, gather_map};
use super::tensor::{split_axis, strides, Tensor};
use crate::error::{Error, Result};

/// Gradients of a scalar with respect to every differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, `None` for non-leaves and constants.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, or `None` if the leaf was not differentiable.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    /// Reverse pass from a one-element `loss`. A graph may be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => Some(match g {
                    Some(g) => Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Named parameter gradients in registration order.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect()
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if let Some(g) = self.slot(grads, v) {
            f(g);
        }
    }

    fn propagate(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| axpy(g, 1.0, gy));
                self.acc(grads, *b, |g| axpy(g, 1.0, gy));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| axpy(g, 1.0, gy));
                self.acc(grads, *b, |g| axpy(g, -1.0, gy));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.acc(grads, *a, |g| {
                    for ((g, y), x) in g.iter_mut().zip(gy).zip(bv) {
                        *g += y * x;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((g, y), x) in g.iter_mut().zip(gy).zip(av) {
                        *g += y * x;
                    }
                });
            }
            Op::MulConst(a, c) => self.acc(grads, *a, |g| {
                for ((g, y), m) in g.iter_mut().zip(gy).zip(c) {
                    *g += y * m;
                }
            }),
            Op::Scale(a, c) => self.acc(grads, *a, |g| axpy(g, *c, gy)),
            Op::AddScalar(a) => self.acc(grads, *a, |g| axpy(g, 1.0, gy)),
            Op::MulScalar(a, s) => {
                let sv = val(*s)[0];
                self.acc(grads, *a, |g| axpy(g, sv, gy));
                let av = val(*a);
                self.acc(grads, *s, |g| g[0] += kernels::dot(gy, av));
            }
            Op::Unary(a, u) => {
                let x = val(*a);
                self.acc(grads, *a, |g| {
                    for j in 0..g.len() {
                        let d = match u {
                            Unary::Exp => out[j],
                            Unary::Ln => 1.0 / x[j],
                            Unary::Sigmoid => out[j] * (1.0 - out[j]),
                            Unary::Softplus => sigmoid(x[j]),
                            Unary::Abs => {
                                if x[j] > 0.0 {
                                    1.0
                                } else if x[j] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Elu => {
                                if x[j] >= 0.0 {
                                    1.0
                                } else {
                                    x[j].exp()
                                }
                            }
                            Unary::Square => 2.0 * x[j],
                            Unary::Recip => -out[j] * out[j],
                        };
                        g[j] += gy[j] * d;
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |g| g.iter_mut().for_each(|g| *g += gy[0])),
            Op::MeanLast(a) => {
                let n = *self.shape(*a).last().unwrap();
                self.acc(grads, *a, |g| {
                    for (row, y) in g.chunks_mut(n).zip(gy) {
                        row.iter_mut().for_each(|g| *g += y / n as f64);
                    }
                });
            }
            Op::Reshape(a) => self.acc(grads, *a, |g| axpy(g, 1.0, gy)),
            Op::Permute(a, axes) => {
                let shape = self.shape(*a);
                let st = strides(shape);
                let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
                let src_strides: Vec<usize> = axes.iter().map(|&x| st[x]).collect();
                let map = gather_map(&out_shape, &src_strides);
                self.acc(grads, *a, |g| scatter(g, &map, gy));
            }
            Op::BroadcastTo(a) => {
                let out_shape = self.nodes[i].value.shape();
                let src_strides = super::graph::broadcast_strides(self.shape(*a), out_shape)
                    .expect("validated in forward");
                let map = gather_map(out_shape, &src_strides);
                self.acc(grads, *a, |g| scatter(g, &map, gy));
            }
            Op::Narrow { src, axis, start } => {
                let (outer, ext, inner) = split_axis(self.shape(*src), *axis);
                let len = self.nodes[i].value.shape()[*axis];
                self.acc(grads, *src, |g| {
                    for o in 0..outer {
                        axpy(
                            &mut g[(o * ext + start) * inner..][..len * inner],
                            1.0,
                            &gy[o * len * inner..][..len * inner],
                        );
                    }
                });
            }
            Op::Pad { src, axis, before } => {
                let (outer, ext, inner) = split_axis(self.shape(*src), *axis);
                let total = self.nodes[i].value.shape()[*axis];
                self.acc(grads, *src, |g| {
                    for o in 0..outer {
                        axpy(
                            &mut g[o * ext * inner..][..ext * inner],
                            1.0,
                            &gy[(o * total + before) * inner..][..ext * inner],
                        );
                    }
                });
            }
            Op::Gather(a, idx) => self.acc(grads, *a, |g| scatter(g, idx, gy)),
            Op::Concat(parts, axis) => {
                let out_shape = self.nodes[i].value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut at = 0;
                for &p in parts {
                    let ext = self.shape(p)[*axis];
                    self.acc(grads, p, |g| {
                        for o in 0..outer {
                            axpy(
                                &mut g[o * ext * inner..][..ext * inner],
                                1.0,
                                &gy[(o * total + at) * inner..][..ext * inner],
                            );
                        }
                    });
                    at += ext;
                }
            }
            Op::Conv { x, w, geom } => {
                let (xv, wv) = (val(*x), val(*w));
                self.acc(grads, *x, |g| kernels::conv_backward(geom, xv, wv, gy, Some(g), None));
                self.acc(grads, *w, |g| kernels::conv_backward(geom, xv, wv, gy, None, Some(g)));
            }
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (inner, cols) = (sb[0], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                let rows = av.len() / inner.max(1);
                self.acc(grads, *a, |g| {
                    axpy(g, 1.0, &kernels::matmul_bt(gy, bv, rows, cols, inner));
                });
                self.acc(grads, *b, |g| kernels::matmul_at_acc(g, av, gy, rows, inner, cols));
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = self.shape(*a);
                let (bsz, m, k) = (sa[0], sa[1], sa[2]);
                let p = self.nodes[i].value.shape()[2];
                let (av, bv) = (val(*a), val(*b));
                self.acc(grads, *a, |g| {
                    for n in 0..bsz {
                        let gyb = &gy[n * m * p..][..m * p];
                        let bb = &bv[n * k * p..][..k * p];
                        let da = if *transpose_b {
                            kernels::matmul(gyb, bb, m, p, k)
                        } else {
                            kernels::matmul_bt(gyb, bb, m, p, k)
                        };
                        axpy(&mut g[n * m * k..][..m * k], 1.0, &da);
                    }
                });
                self.acc(grads, *b, |g| {
                    for n in 0..bsz {
                        let gyb = &gy[n * m * p..][..m * p];
                        let ab = &av[n * m * k..][..m * k];
                        let gb = &mut g[n * k * p..][..k * p];
                        if *transpose_b {
                            kernels::matmul_at_acc(gb, gyb, ab, m, p, k);
                        } else {
                            kernels::matmul_at_acc(gb, ab, gyb, m, k, p);
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                self.acc(grads, *a, |g| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + ii;
                            let s: f64 = (0..n).map(|j| gy[at(j)] * out[at(j)]).sum();
                            for j in 0..n {
                                g[at(j)] += out[at(j)] * (gy[at(j)] - s);
                            }
                        }
                    }
                });
            }
            Op::Rope { src, base } => {
                let shape = self.shape(*src);
                let (t, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                self.acc(grads, *src, |g| axpy(g, 1.0, &rotate(gy, t, d, *base, -1.0)));
            }
            Op::SoftThreshold(d, tau) => {
                let (x, t) = (val(*d), val(*tau)[0]);
                self.acc(grads, *d, |g| {
                    for j in 0..g.len() {
                        if x[j].abs() > t {
                            g[j] += gy[j];
                        }
                    }
                });
                self.acc(grads, *tau, |g| {
                    g[0] += x
                        .iter()
                        .zip(gy)
                        .filter(|(x, _)| x.abs() > t)
                        .map(|(x, y)| -x.signum() * y)
                        .sum::<f64>();
                });
            }
            Op::Resample { proto, scale, taps } => {
                let p = val(*proto);
                self.acc(grads, *proto, |g| {
                    for (tap, y) in taps.iter().zip(gy) {
                        if !tap.inside {
                            continue;
                        }
                        if tap.lo + 1 < p.len() {
                            g[tap.lo] += (1.0 - tap.frac) * y;
                            g[tap.lo + 1] += tap.frac * y;
                        } else {
                            g[tap.lo] += y;
                        }
                    }
                });
                self.acc(grads, *scale, |g| {
                    g[0] += taps
                        .iter()
                        .zip(gy)
                        .filter(|(tap, _)| tap.inside && tap.lo + 1 < p.len())
                        .map(|(tap, y)| y * (p[tap.lo + 1] - p[tap.lo]) * tap.dq_ds)
                        .sum::<f64>();
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let shape = self.shape(*x);
                let (n, f, t) = (shape[0], shape[1], shape[2]);
                let gam = val(*gamma);
                let rows = |fi: usize| (0..n).map(move |b| (b * f + fi) * t);
                self.acc(grads, *gamma, |g| {
                    for (fi, gv) in g.iter_mut().enumerate() {
                        for r in rows(fi) {
                            *gv += kernels::dot(&gy[r..r + t], &xhat[r..r + t]);
                        }
                    }
                });
                self.acc(grads, *beta, |g| {
                    for (fi, gv) in g.iter_mut().enumerate() {
                        for r in rows(fi) {
                            *gv += gy[r..r + t].iter().sum::<f64>();
                        }
                    }
                });
                self.acc(grads, *x, |g| {
                    for fi in 0..f {
                        let scale = gam[fi] * inv_std[fi];
                        if *batch {
                            let m = (n * t) as f64;
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for r in rows(fi) {
                                s1 += gy[r..r + t].iter().sum::<f64>();
                                s2 += kernels::dot(&gy[r..r + t], &xhat[r..r + t]);
                            }
                            for r in rows(fi) {
                                for j in r..r + t {
                                    g[j] += scale * (gy[j] - s1 / m - xhat[j] * s2 / m);
                                }
                            }
                        } else {
                            for r in rows(fi) {
                                axpy(&mut g[r..r + t], scale, &gy[r..r + t]);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let gn = val(*gain);
                self.acc(grads, *gain, |g| {
                    for (gr, hr) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.acc(grads, *bias, |g| {
                    for gr in gy.chunks(d) {
                        axpy(g, 1.0, gr);
                    }
                });
                self.acc(grads, *x, |g| {
                    for (r, (gr, hr)) in gy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(gn).map(|(a, b)| a * b).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2 = kernels::dot(&dh, hr);
                        let dn = d as f64;
                        for j in 0..d {
                            g[r * d + j] += inv_std[r] * (dh[j] - s1 / dn - hr[j] * s2 / dn);
                        }
                    }
                });
            }
            Op::AvgPool(a, w) => {
                let t = *self.shape(*a).last().unwrap();
                let out_t = t / w;
                self.acc(grads, *a, |g| {
                    for (row, gr) in g.chunks_mut(t).zip(gy.chunks(out_t)) {
                        for (j, y) in gr.iter().enumerate() {
                            row[j * w..(j + 1) * w]
                                .iter_mut()
                                .for_each(|g| *g += y / *w as f64);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let n = labels.len() as f64;
                self.acc(grads, *logits, |g| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            g[r * c + j] += gy[0] * (probs[r * c + j] - onehot) / n;
                        }
                    }
                });
            }
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn scatter(g: &mut [f64], map: &[usize], gy: &[f64]) {
    for (&src, y) in map.iter().zip(gy) {
        g[src] += y;
    }
}
