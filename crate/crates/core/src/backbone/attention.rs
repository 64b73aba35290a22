use rand_chacha::ChaCha8Rng;

use super::{glorot, Ctx};
use crate::config::{EncoderConfig, ModelConfig};
use crate::error::{dim_err, Result};
use crate::ndarr::{Graph, Tensor, Var};
use crate::params::ParamStore;
use crate::registry::Attention;

pub(super) fn init(cfg: &ModelConfig, params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let (d, dk, e) = (cfg.d_model(), cfg.d_k(), &cfg.encoder);
    params.insert("enc.ln.gain", Tensor::full(&[d], 1.0));
    params.insert("enc.ln.bias", Tensor::zeros(&[d]));
    params.insert("enc.wq", glorot(rng, &[d, e.h_q * dk], d, dk));
    params.insert("enc.wk", glorot(rng, &[d, e.h_kv * dk], d, dk));
    params.insert("enc.wv", glorot(rng, &[d, e.h_kv * dk], d, dk));
    params.insert("enc.wo", glorot(rng, &[e.h_q * dk, d], e.h_q * dk, d));
}

/// Rotary phase on `[.., T, d_k]`: position `m` turns pair `(2i, 2i+1)` by
/// `m * base^(-2i/d_k)`.
pub fn rope_apply(g: &mut Graph, x: Var, base: f64) -> Result<Var> {
    g.rope(x, base)
}

/// Grouped-query attention over `x: [N, T, d_model]` with `enc.*` weights.
/// Returns the output and one `[N, T, T]` attention map per query head.
pub fn gqa_heads(ctx: &mut Ctx, enc: &EncoderConfig, x: Var) -> Result<(Var, Vec<Var>)> {
    let shape = ctx.g.shape(x).to_vec();
    let [_, t, d] = shape[..] else {
        return Err(dim_err!("attention expects [N, T, d_model], got {:?}", shape));
    };
    if t == 0 {
        return Err(dim_err!("attention over an empty sequence"));
    }
    let (wq, wk, wv, wo) = (ctx.p("enc.wq")?, ctx.p("enc.wk")?, ctx.p("enc.wv")?, ctx.p("enc.wo")?);
    let dk = ctx.g.shape(wq)[1] / enc.h_q;
    if ctx.g.shape(wq)[0] != d || ctx.g.shape(wk)[1] != enc.h_kv * dk {
        return Err(dim_err!("projection weights do not match d_model={d}, h_q={}, h_kv={}", enc.h_q, enc.h_kv));
    }
    let group = enc.h_q / enc.h_kv;

    let mut kv = Vec::with_capacity(enc.h_kv);
    for j in 0..enc.h_kv {
        let wkj = ctx.g.narrow(wk, 1, j * dk, dk)?;
        let wvj = ctx.g.narrow(wv, 1, j * dk, dk)?;
        let k = ctx.g.matmul(x, wkj)?;
        let k = rope_apply(ctx.g, k, enc.rope_base)?;
        let v = ctx.g.matmul(x, wvj)?;
        ctx.stats.kv_projections += 1;
        kv.push((k, v));
    }

    let mut heads = Vec::with_capacity(enc.h_q);
    let mut maps = Vec::with_capacity(enc.h_q);
    for h in 0..enc.h_q {
        let wqh = ctx.g.narrow(wq, 1, h * dk, dk)?;
        let q = ctx.g.matmul(x, wqh)?;
        let q = rope_apply(ctx.g, q, enc.rope_base)?;
        ctx.stats.q_projections += 1;
        let (k, v) = kv[h / group];
        let scores = ctx.g.batch_matmul(q, k, true)?;
        let scores = ctx.g.scale(scores, 1.0 / (dk as f64).sqrt());
        let attn = ctx.g.softmax(scores, 2)?;
        heads.push(ctx.g.batch_matmul(attn, v, false)?);
        maps.push(attn);
    }
    let cat = if heads.len() == 1 { heads[0] } else { ctx.g.concat(&heads, 2)? };
    Ok((ctx.g.matmul(cat, wo)?, maps))
}

pub fn gqa_attention(ctx: &mut Ctx, enc: &EncoderConfig, x: Var) -> Result<Var> {
    Ok(gqa_heads(ctx, enc, x)?.0)
}

/// Window starts covering `0..t`; the last window is pulled back to end at `t`.
fn window_starts(t: usize, len: usize, stride: usize) -> Vec<usize> {
    if t <= len {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=t - len).step_by(stride).collect();
    if starts.last() != Some(&(t - len)) {
        starts.push(t - len);
    }
    starts
}

/// Shared-weight attention over overlapping windows; overlapping outputs are averaged.
pub fn windowed_attention(ctx: &mut Ctx, enc: &EncoderConfig, x: Var) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    let [n, t, d] = shape[..] else {
        return Err(dim_err!("attention expects [N, T, d_model], got {:?}", shape));
    };
    let starts = window_starts(t, enc.window_len, enc.window_stride);
    if starts.len() == 1 {
        return gqa_attention(ctx, enc, x);
    }
    let len = enc.window_len;
    let mut cover = vec![0usize; t];
    let mut acc: Option<Var> = None;
    for &s in &starts {
        let w = ctx.g.narrow(x, 1, s, len)?;
        let y = gqa_attention(ctx, enc, w)?;
        let y = ctx.g.pad(y, 1, s, t)?;
        cover[s..s + len].iter_mut().for_each(|c| *c += 1);
        acc = Some(match acc {
            Some(a) => ctx.g.add(a, y)?,
            None => y,
        });
    }
    let inv: Vec<f64> = (0..n)
        .flat_map(|_| cover.iter().flat_map(|&c| std::iter::repeat_n(1.0 / c as f64, d)))
        .collect();
    ctx.g.mul_const(acc.expect("at least two windows"), inv)
}

#[derive(Debug, Default)]
pub struct GqaAttention;

impl Attention for GqaAttention {
    fn name(&self) -> &'static str {
        "gqa"
    }

    fn forward(&self, ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<Var> {
        gqa_attention(ctx, &cfg.encoder, x)
    }
}

#[derive(Debug, Default)]
pub struct WindowedAttention;

impl Attention for WindowedAttention {
    fn name(&self) -> &'static str {
        "windowed"
    }

    fn forward(&self, ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<Var> {
        windowed_attention(ctx, &cfg.encoder, x)
    }
}
