use rand_chacha::ChaCha8Rng;

use super::{add_bn, glorot, Ctx};
use crate::config::ModelConfig;
use crate::error::{dim_err, Result};
use crate::ndarr::{ConvSpec, Var};
use crate::params::ParamStore;

pub(super) fn init(cfg: &ModelConfig, params: &mut ParamStore, buffers: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let c = &cfg.conv;
    let f2 = c.f2();
    for (j, (&k, &n)) in c.mk_kernels.iter().zip(&c.split()).enumerate() {
        params.insert(format!("conv.temporal.k{j}"), glorot(rng, &[n, 1, k], k, n * k));
    }
    add_bn(params, buffers, "conv.bn1", c.f1);
    params.insert(
        "conv.spatial",
        glorot(rng, &[f2, cfg.channels, 1], cfg.channels, c.depth),
    );
    add_bn(params, buffers, "conv.bn2", f2);
    params.insert(
        "conv.separable",
        glorot(rng, &[f2, f2, c.sep_kernel], f2 * c.sep_kernel, f2 * c.sep_kernel),
    );
    add_bn(params, buffers, "conv.bn3", f2);
}

/// `[N, C, T] -> [N, F2, T / pool]`: multi-kernel temporal filters shared
/// across channels, a depthwise spatial mix over all channels, a temporal
/// conv at width F2, then pooling and dropout.
pub fn conv_block(ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let c = &cfg.conv;
    let shape = ctx.g.shape(x).to_vec();
    let [n, ch, t] = shape[..] else {
        return Err(dim_err!("conv block expects [N, C, T], got {:?}", shape));
    };
    if t < c.pool {
        return Err(dim_err!("signal length {t} shorter than pooling window {}", c.pool));
    }
    let (f1, f2) = (c.f1, c.f2());

    let rows = ctx.g.reshape(x, &[n * ch, 1, t])?;
    let mut parts = Vec::with_capacity(c.mk_kernels.len());
    for j in 0..c.mk_kernels.len() {
        let w = ctx.p(&format!("conv.temporal.k{j}"))?;
        parts.push(ctx.g.conv1d(rows, w, ConvSpec::same(1))?);
    }
    let h = if parts.len() == 1 { parts[0] } else { ctx.g.concat(&parts, 1)? };
    let h = ctx.batch_norm("conv.bn1", h)?;

    // [N*C, F1, T] -> [N, F1*C, T] so each temporal filter sees every channel
    let h = ctx.g.reshape(h, &[n, ch, f1, t])?;
    let h = ctx.g.permute(h, &[0, 2, 1, 3])?;
    let h = ctx.g.reshape(h, &[n, f1 * ch, t])?;
    let w = ctx.p("conv.spatial")?;
    let h = ctx.g.conv1d(h, w, ConvSpec::same(f1))?;
    let h = ctx.batch_norm("conv.bn2", h)?;
    let h = ctx.g.elu(h);

    let w = ctx.p("conv.separable")?;
    let h = ctx.g.conv1d(h, w, ConvSpec::same(1))?;
    let h = ctx.batch_norm("conv.bn3", h)?;
    let h = ctx.g.elu(h);
    debug_assert_eq!(ctx.g.shape(h), &[n, f2, t]);

    let h = ctx.g.avg_pool_last(h, c.pool)?;
    ctx.dropout(h, c.dropout)
}
