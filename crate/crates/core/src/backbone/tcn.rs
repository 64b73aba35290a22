use rand_chacha::ChaCha8Rng;

use super::{add_bn, glorot, Ctx};
use crate::config::ModelConfig;
use crate::error::{dim_err, Result};
use crate::ndarr::{ConvSpec, Var};
use crate::params::ParamStore;

pub(super) fn init(cfg: &ModelConfig, params: &mut ParamStore, buffers: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let (f, k) = (cfg.d_model(), cfg.tcn.kernel);
    for b in 0..cfg.tcn.levels {
        for c in 1..=2 {
            params.insert(format!("tcn.b{b}.conv{c}"), glorot(rng, &[f, f, k], f * k, f * k));
            add_bn(params, buffers, &format!("tcn.b{b}.bn{c}"), f);
        }
    }
}

/// Residual stack of dilated causal convolutions over `[N, F, T]`; block `b`
/// uses dilation `2^b`. Output `t` depends on inputs `<= t` only.
pub fn tcn_forward(ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.len() != 3 || shape[2] == 0 {
        return Err(dim_err!("tcn expects non-empty [N, F, T], got {:?}", shape));
    }
    let mut h = x;
    for b in 0..cfg.tcn.levels {
        let spec = ConvSpec::causal(1 << b);
        let mut y = h;
        for c in 1..=2 {
            let w = ctx.p(&format!("tcn.b{b}.conv{c}"))?;
            y = ctx.g.conv1d(y, w, spec)?;
            y = ctx.batch_norm(&format!("tcn.b{b}.bn{c}"), y)?;
            y = ctx.g.elu(y);
            y = ctx.dropout(y, cfg.tcn.dropout)?;
        }
        h = ctx.g.add(h, y)?;
    }
    Ok(h)
}
