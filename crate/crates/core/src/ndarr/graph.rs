use super::kernels::{self, ConvGeom};
use super::tensor::{split_axis, strides, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor used by batch and layer normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch statistic in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output aligned with input; `floor((K-1)/2)` taps look ahead, the rest look back.
    Same,
    /// Only current and past samples contribute.
    Causal,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub groups: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(groups: usize) -> Self {
        Self {
            groups,
            dilation: 1,
            padding: Padding::Same,
        }
    }

    pub fn causal(dilation: usize) -> Self {
        Self {
            groups: 1,
            dilation,
            padding: Padding::Causal,
        }
    }
}

/// Which statistics batch normalization reads.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    Batch,
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Per-feature batch statistics produced in batch mode (biased variance).
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Exp,
    Ln,
    Sigmoid,
    Softplus,
    Abs,
    Elu,
    Square,
    Recip,
}

#[derive(Clone, Debug)]
pub(crate) struct ResampleTap {
    pub lo: usize,
    pub frac: f64,
    /// d(position)/d(scale)
    pub dq_ds: f64,
    pub inside: bool,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar(Var, Var),
    Unary(Var, Unary),
    Sum(Var),
    MeanLast(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    BroadcastTo(Var),
    Narrow { src: Var, axis: usize, start: usize },
    Pad { src: Var, axis: usize, before: usize },
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Conv { x: Var, w: Var, geom: ConvGeom },
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Softmax(Var, usize),
    Rope { src: Var, base: f64 },
    SoftThreshold(Var, Var),
    Resample { proto: Var, scale: Var, taps: Vec<ResampleTap> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    AvgPool(Var, usize),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Tape of executed operations. Built fresh for every forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) params: Vec<(String, Var)>,
    pub(crate) consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Named trainable leaves registered through [`Graph::param`].
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.leaf(value, true);
        self.params.push((name.to_string(), v));
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, data).expect("shape"), op, rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, data).expect("shape"), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Elementwise product with a fixed (non-differentiable) array, e.g. a dropout mask.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(dim_err!(
                "mul_const: {} factors for tensor {:?}",
                c.len(),
                self.shape(a)
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&c)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulConst(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    /// `a * s` where `s` holds a single value.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let data = self.value(a).data().iter().map(|x| x * sv).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, s]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulScalar(a, s), rg))
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let f: fn(f64) -> f64 = match u {
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Abs => f64::abs,
            Unary::Elu => elu,
            Unary::Square => |x| x * x,
            Unary::Recip => |x| 1.0 / x,
        };
        self.map(a, f, Op::Unary(a, u))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Elu)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over the last axis, kept as an extent-1 axis.
    pub fn mean_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or_else(|| dim_err!("mean_last on rank-0"))?;
        if n == 0 {
            return Err(dim_err!("mean_last over empty axis"));
        }
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .map(|c| c.iter().sum::<f64>() / n as f64)
            .collect();
        let mut out = shape;
        *out.last_mut().unwrap() = 1;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out, data)?, Op::MeanLast(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(dim_err!("invalid permutation {:?} for shape {:?}", axes, shape));
        }
        let st = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&x| st[x]).collect();
        let map = kernels::gather_map(&out_shape, &src_strides);
        let src = self.value(a).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Right-aligned broadcast of `a` to `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src_strides = broadcast_strides(self.shape(a), shape)?;
        let map = kernels::gather_map(shape, &src_strides);
        let src = self.value(a).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::BroadcastTo(a), rg))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(dim_err!(
                "narrow axis {axis} [{start}, {}) out of bounds for {:?}",
                start + len,
                shape
            ));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * ext + start) * inner..][..len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out, data)?, Op::Narrow { src: a, axis, start }, rg))
    }

    /// Zero-pads `axis` to `total` entries, placing `a` at offset `before`.
    pub fn pad(&mut self, a: Var, axis: usize, before: usize, total: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || before + shape[axis] > total {
            return Err(dim_err!("pad axis {axis} to {total} at {before} for {:?}", shape));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * total * inner];
        for o in 0..outer {
            data[(o * total + before) * inner..][..ext * inner]
                .copy_from_slice(&src[o * ext * inner..][..ext * inner]);
        }
        let mut out = shape;
        out[axis] = total;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out, data)?, Op::Pad { src: a, axis, before }, rg))
    }

    /// Picks flat elements of `a` into a 1-D tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(a).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(dim_err!("gather index {bad} out of {}", src.len()));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![indices.len()], data)?, Op::Gather(a, indices.to_vec()), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| dim_err!("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {axis} for rank {}", first.len()));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(dim_err!("concat shapes {:?} vs {:?}", s, first));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let ext = self.shape(p)[axis];
                data.extend_from_slice(&self.value(p).data()[o * ext * inner..][..ext * inner]);
            }
        }
        let mut out = first;
        out[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(out, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Grouped 1-D convolution of `x: [N, C_in, T]` (or `[C_in, T]`) with
    /// `w: [C_out, C_in / groups, K]` (or `[C_out, K]` when `C_in / groups == 1`).
    ///
    /// Computes a true convolution, `y[t] = sum_k w[k] x[t + offset - k*dilation]`,
    /// with `offset = floor((K-1)/2)*dilation` for [`Padding::Same`] and `0` for
    /// [`Padding::Causal`]. Samples outside `[0, T)` read as zero.
    pub fn conv1d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (batch, c_in, len) = match xs.as_slice() {
            [c, t] => (1, *c, *t),
            [n, c, t] => (*n, *c, *t),
            _ => return Err(dim_err!("conv1d input must be rank 2 or 3, got {:?}", xs)),
        };
        if spec.groups == 0 || c_in % spec.groups != 0 {
            return Err(Error::Config(format!(
                "conv1d groups {} do not divide {} input channels",
                spec.groups, c_in
            )));
        }
        let (c_out, per_group, taps) = match ws.as_slice() {
            [co, k] => (*co, 1, *k),
            [co, cg, k] => (*co, *cg, *k),
            _ => return Err(dim_err!("conv1d kernel must be rank 2 or 3, got {:?}", ws)),
        };
        if taps == 0 || spec.dilation == 0 {
            return Err(dim_err!("conv1d needs K >= 1 and dilation >= 1"));
        }
        if per_group != c_in / spec.groups || c_out % spec.groups != 0 {
            return Err(dim_err!(
                "conv1d kernel {:?} inconsistent with {} input channels in {} groups",
                ws,
                c_in,
                spec.groups
            ));
        }
        let offset = match spec.padding {
            Padding::Same => ((taps - 1) / 2 * spec.dilation) as isize,
            Padding::Causal => 0,
        };
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            len,
            taps,
            groups: spec.groups,
            dilation: spec.dilation,
            offset,
        };
        let y = kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data());
        let out_shape = if xs.len() == 2 { vec![c_out, len] } else { vec![batch, c_out, len] };
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::new(out_shape, y)?, Op::Conv { x, w, geom }, rg))
    }

    /// `a: [..., M, K] x b: [K, P] -> [..., M, P]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(dim_err!("matmul {:?} x {:?}", sa, sb));
        }
        let inner = sb[0];
        let rows = self.value(a).len() / inner.max(1);
        let y = kernels::matmul(self.value(a).data(), self.value(b).data(), rows, inner, sb[1]);
        let mut out = sa;
        *out.last_mut().unwrap() = sb[1];
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(out, y)?, Op::MatMul(a, b), rg))
    }

    /// Batched product over the leading axis: `[B, M, K] x [B, K, P]`, or
    /// `[B, M, K] x [B, P, K]^T` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(dim_err!("batch_matmul {:?} x {:?} (transpose_b={transpose_b})", sa, sb));
        }
        let (bsz, m, k) = (sa[0], sa[1], sa[2]);
        let p = if transpose_b { sb[1] } else { sb[2] };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(bsz * m * p);
        for i in 0..bsz {
            let ab = &ad[i * m * k..][..m * k];
            let bb = &bd[i * k * p..][..k * p];
            y.extend(if transpose_b {
                kernels::matmul_bt(ab, bb, m, k, p)
            } else {
                kernels::matmul(ab, bb, m, k, p)
            });
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![bsz, m, p], y)?,
            Op::BatchMatMul { a, b, transpose_b },
            rg,
        ))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(dim_err!("softmax over empty or missing axis {axis} of {:?}", shape));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut y = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    y[at(j)] /= total;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, y)?, Op::Softmax(a, axis), rg))
    }

    /// Rotary phase on `[..., T, d]`: pair `(2i, 2i+1)` at position `m` turns by
    /// `m * base^(-2i/d)`.
    pub fn rope(&mut self, a: Var, base: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(dim_err!("rope needs [.., T, d], got {:?}", shape));
        }
        let d = shape[shape.len() - 1];
        let t = shape[shape.len() - 2];
        if d % 2 != 0 {
            return Err(Error::Config(format!("rope needs an even head width, got {d}")));
        }
        let y = rotate(self.value(a).data(), t, d, base, 1.0);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, y)?, Op::Rope { src: a, base }, rg))
    }

    /// `sign(d) * max(|d| - tau, 0)` with a single-valued threshold `tau`.
    pub fn soft_threshold(&mut self, d: Var, tau: Var) -> Result<Var> {
        let t = self.value(tau).item()?;
        let data = self
            .value(d)
            .data()
            .iter()
            .map(|&x| x.signum() * (x.abs() - t).max(0.0))
            .collect();
        let shape = self.shape(d).to_vec();
        let rg = self.rg(&[d, tau]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SoftThreshold(d, tau), rg))
    }

    /// Linearly interpolates the 1-D prototype onto `k` unit-spaced taps after
    /// stretching its grid by the single-valued `scale` about the centre.
    /// Taps that fall outside the stretched support read zero.
    pub fn resample(&mut self, proto: Var, scale: Var, k: usize) -> Result<Var> {
        let p = self.value(proto).data().to_vec();
        let s = self.value(scale).item()?;
        if p.len() < 2 || self.value(proto).rank() != 1 {
            return Err(dim_err!("resample needs a 1-D prototype of >= 2 taps"));
        }
        if k == 0 {
            return Err(dim_err!("resample to zero taps"));
        }
        if !(s > 0.0) {
            return Err(Error::Config(format!("resample scale must be positive, got {s}")));
        }
        let taps = resample_taps(p.len(), s, k);
        let v = taps
            .iter()
            .map(|tap| {
                if !tap.inside {
                    0.0
                } else if tap.lo + 1 < p.len() {
                    (1.0 - tap.frac) * p[tap.lo] + tap.frac * p[tap.lo + 1]
                } else {
                    p[tap.lo]
                }
            })
            .collect();
        let rg = self.rg(&[proto, scale]);
        Ok(self.push(Tensor::new(vec![k], v)?, Op::Resample { proto, scale, taps }, rg))
    }

    /// Batch normalization of `x: [N, F, T]` per feature `F` with learnable
    /// `gamma, beta: [F]`. Returns the batch statistics when they were used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        let [n, f, t] = shape[..] else {
            return Err(dim_err!("batch_norm expects [N, F, T], got {:?}", shape));
        };
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(dim_err!("batch_norm affine params must be [{f}]"));
        }
        let xd = self.value(x).data();
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                let count = n * t;
                if count < 2 {
                    return Err(dim_err!("batch_norm in batch mode needs N*T > 1, got {count}"));
                }
                let mut mean = vec![0.0; f];
                let mut var = vec![0.0; f];
                for fi in 0..f {
                    let rows = (0..n).map(|b| &xd[(b * f + fi) * t..][..t]);
                    let m = rows.clone().flatten().sum::<f64>() / count as f64;
                    let v = rows.flatten().map(|x| (x - m) * (x - m)).sum::<f64>() / count as f64;
                    mean[fi] = m;
                    var[fi] = v;
                }
                let bs = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(bs))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(dim_err!("running statistics must have {f} features"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for b in 0..n {
            for fi in 0..f {
                let base = (b * f + fi) * t;
                for i in base..base + t {
                    let h = (xd[i] - mean[fi]) * inv_std[fi];
                    xhat[i] = h;
                    y[i] = g[fi] * h + bt[fi];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let batch = batch_stats.is_some();
        let out = self.push(
            Tensor::new(shape, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            },
            rg,
        );
        Ok((out, batch_stats))
    }

    /// Layer normalization over the last axis with learnable `gain, bias: [D]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| dim_err!("layer_norm on rank-0"))?;
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err!("layer_norm over {d} needs [{d}] gain and bias"));
        }
        let xd = self.value(x).data();
        let (gn, bs) = (self.value(gain).data(), self.value(bias).data());
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..][..d];
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
            let is = 1.0 / (v + NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - m) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = gn[j] * h + bs[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Non-overlapping mean pooling along the last axis; the remainder is dropped.
    pub fn avg_pool_last(&mut self, a: Var, window: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let t = *shape.last().ok_or_else(|| dim_err!("avg_pool on rank-0"))?;
        if window == 0 {
            return Err(Error::Config("pooling window must be >= 1".into()));
        }
        if t < window {
            return Err(dim_err!("pooling window {window} exceeds length {t}"));
        }
        let out_t = t / window;
        let y = self
            .value(a)
            .data()
            .chunks(t)
            .flat_map(|row| {
                row.chunks_exact(window)
                    .take(out_t)
                    .map(|c| c.iter().sum::<f64>() / window as f64)
            })
            .collect();
        let mut out = shape;
        *out.last_mut().unwrap() = out_t;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out, y)?, Op::AvgPool(a, window), rg))
    }

    /// Mean cross-entropy of `logits: [N, classes]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let [n, c] = shape[..] else {
            return Err(dim_err!("cross_entropy expects [N, classes], got {:?}", shape));
        };
        if labels.len() != n || n == 0 {
            return Err(dim_err!("{} labels for {n} rows", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &ld[r * c..][..c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[label];
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }
}

pub(crate) fn broadcast_strides(from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    if from.len() > to.len() {
        return Err(dim_err!("cannot broadcast {:?} to {:?}", from, to));
    }
    let lead = to.len() - from.len();
    let st = strides(from);
    let mut out = vec![0; to.len()];
    for (i, &ext) in from.iter().enumerate() {
        if ext == to[lead + i] {
            out[lead + i] = st[i];
        } else if ext != 1 {
            return Err(dim_err!("cannot broadcast {:?} to {:?}", from, to));
        }
    }
    Ok(out)
}

/// Rotates consecutive pairs of `[rows, d]` blocks; `sign = -1` inverts.
pub(crate) fn rotate(x: &[f64], t: usize, d: usize, base: f64, sign: f64) -> Vec<f64> {
    let freqs: Vec<f64> = (0..d / 2)
        .map(|i| base.powf(-2.0 * i as f64 / d as f64))
        .collect();
    let mut y = vec![0.0; x.len()];
    for (r, (xr, yr)) in x.chunks(d).zip(y.chunks_mut(d)).enumerate() {
        let m = (r % t) as f64;
        for (i, w) in freqs.iter().enumerate() {
            let (s, c) = (sign * m * w).sin_cos();
            let (a, b) = (xr[2 * i], xr[2 * i + 1]);
            yr[2 * i] = a * c - b * s;
            yr[2 * i + 1] = a * s + b * c;
        }
    }
    y
}

pub(crate) fn resample_taps(k0: usize, s: f64, k: usize) -> Vec<ResampleTap> {
    let c0 = (k0 as f64 - 1.0) / 2.0;
    let ck = (k as f64 - 1.0) / 2.0;
    let last = (k0 - 1) as f64;
    (0..k)
        .map(|j| {
            let off = j as f64 - ck;
            let q = c0 + off / s;
            let inside = (0.0..=last).contains(&q);
            let lo = if inside { (q.floor() as usize).min(k0 - 1) } else { 0 };
            ResampleTap {
                lo,
                frac: if inside { q - lo as f64 } else { 0.0 },
                dq_ds: -off / (s * s),
                inside,
            }
        })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Exponential linear unit with unit saturation.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}
