//! Raw loops shared by the forward and backward passes.

/// Geometry of a grouped 1-D convolution over `[batch, channels, time]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub taps: usize,
    pub groups: usize,
    pub dilation: usize,
    /// `y[t] = sum_k w[k] * x[t + offset - k * dilation]`
    pub offset: isize,
}

impl ConvGeom {
    fn shift(&self, k: usize) -> isize {
        self.offset - (k * self.dilation) as isize
    }

    /// Output positions `t` for which `t + shift` indexes the input.
    fn span(&self, shift: isize) -> Option<(usize, usize)> {
        let t = self.len as isize;
        let lo = (-shift).max(0);
        let hi = (t - shift).min(t);
        (lo < hi).then_some((lo as usize, hi as usize))
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (cin_g, cout_g) = (g.c_in / g.groups, g.c_out / g.groups);
    let mut y = vec![0.0; g.batch * g.c_out * g.len];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let yrow = &mut y[(b * g.c_out + co) * g.len..][..g.len];
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let xrow = &x[(b * g.c_in + ci) * g.len..][..g.len];
                let wrow = &w[(co * cin_g + cl) * g.taps..][..g.taps];
                for (k, &wv) in wrow.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let shift = g.shift(k);
                    let Some((lo, hi)) = g.span(shift) else { continue };
                    let src = &xrow[(lo as isize + shift) as usize..];
                    for (yv, xv) in yrow[lo..hi].iter_mut().zip(src) {
                        *yv += wv * xv;
                    }
                }
            }
        }
    }
    y
}

/// Accumulates input and/or weight gradients of a convolution.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let (cin_g, cout_g) = (g.c_in / g.groups, g.c_out / g.groups);
    if let Some(dx) = dx {
        for b in 0..g.batch {
            for co in 0..g.c_out {
                let grp = co / cout_g;
                let dyrow = &dy[(b * g.c_out + co) * g.len..][..g.len];
                for cl in 0..cin_g {
                    let ci = grp * cin_g + cl;
                    let dxrow = &mut dx[(b * g.c_in + ci) * g.len..][..g.len];
                    let wrow = &w[(co * cin_g + cl) * g.taps..][..g.taps];
                    for (k, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let shift = g.shift(k);
                        let Some((lo, hi)) = g.span(shift) else { continue };
                        let dst = &mut dxrow[(lo as isize + shift) as usize..];
                        for (d, gv) in dst.iter_mut().zip(&dyrow[lo..hi]) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..g.batch {
            for co in 0..g.c_out {
                let grp = co / cout_g;
                let dyrow = &dy[(b * g.c_out + co) * g.len..][..g.len];
                for cl in 0..cin_g {
                    let ci = grp * cin_g + cl;
                    let xrow = &x[(b * g.c_in + ci) * g.len..][..g.len];
                    let dwrow = &mut dw[(co * cin_g + cl) * g.taps..][..g.taps];
                    for (k, dwv) in dwrow.iter_mut().enumerate() {
                        let shift = g.shift(k);
                        let Some((lo, hi)) = g.span(shift) else { continue };
                        let src = &xrow[(lo as isize + shift) as usize..];
                        *dwv += dot(&dyrow[lo..hi], src);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent partial sums so the loop vectorizes
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// `y[r, p] = sum_k a[r, k] * b[k, p]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        let yrow = &mut y[r * cols..][..cols];
        for k in 0..inner {
            let av = a[r * inner + k];
            if av == 0.0 {
                continue;
            }
            for (yv, bv) in yrow.iter_mut().zip(&b[k * cols..][..cols]) {
                *yv += av * bv;
            }
        }
    }
    y
}

/// `y[r, p] = sum_k a[r, k] * b[p, k]`.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        let arow = &a[r * inner..][..inner];
        for p in 0..cols {
            y[r * cols + p] = dot(arow, &b[p * inner..][..inner]);
        }
    }
    y
}

/// `y[k, p] += sum_r a[r, k] * b[r, p]`, accumulated into `y`.
pub(crate) fn matmul_at_acc(
    y: &mut [f64],
    a: &[f64],
    b: &[f64],
    rows: usize,
    inner: usize,
    cols: usize,
) {
    for r in 0..rows {
        let brow = &b[r * cols..][..cols];
        for k in 0..inner {
            let av = a[r * inner + k];
            if av == 0.0 {
                continue;
            }
            for (yv, bv) in y[k * cols..][..cols].iter_mut().zip(brow) {
                *yv += av * bv;
            }
        }
    }
}

/// Source flat index for every position of `out_shape`, given source strides
/// aligned to the output axes (stride 0 for broadcast axes).
pub(crate) fn gather_map(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    if total == 0 {
        return map;
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}
