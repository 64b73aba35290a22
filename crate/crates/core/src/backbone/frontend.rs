use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Ctx;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::ndarr::{Tensor, Var};
use crate::params::ParamStore;
use crate::rdwt::{ensemble_forward, hybrid_fuse, prototype_penalty, regularize, scales, BranchVars, EnsembleVars};
use crate::registry::FrontEnd;

/// Front-end output plus its contributions to the training loss.
#[derive(Clone, Debug)]
pub struct FrontOutput {
    pub y: Var,
    pub scale_reg: Option<Var>,
    pub proto_reg: Option<Var>,
}

/// Passes the raw signal through.
#[derive(Debug, Default)]
pub struct RawFrontEnd;

impl FrontEnd for RawFrontEnd {
    fn name(&self) -> &'static str {
        "raw"
    }

    fn init(&self, _: &ModelConfig, _: &mut ParamStore, _: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn forward(&self, _: &mut Ctx, _: &ModelConfig, x: Var) -> Result<FrontOutput> {
        Ok(FrontOutput {
            y: x,
            scale_reg: None,
            proto_reg: None,
        })
    }
}

/// Ensemble of learned-dilation wavelet branches.
#[derive(Debug, Default)]
pub struct RdwtFrontEnd;

impl FrontEnd for RdwtFrontEnd {
    fn name(&self) -> &'static str {
        "rdwt"
    }

    fn init(&self, cfg: &ModelConfig, params: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let r = &cfg.rdwt;
        let z_mu = r.z_mu()?;
        let k0 = r.prototype_len();
        for b in 0..cfg.ensemble.branches {
            // later branches start slightly off the anchors so they can diverge
            let z: Vec<f64> = z_mu
                .iter()
                .map(|z| if b == 0 { *z } else { z + rng.random_range(-0.5..0.5) })
                .collect();
            params.insert(format!("rdwt.b{b}.z"), Tensor::from_vec(z));
            params.insert(format!("rdwt.b{b}.theta"), Tensor::full(&[r.levels], r.theta_init));
            params.insert(format!("rdwt.b{b}.alpha"), Tensor::full(&[r.levels], r.alpha_init));
            params.insert(format!("rdwt.b{b}.delta_low"), Tensor::zeros(&[k0]));
            params.insert(format!("rdwt.b{b}.delta_high"), Tensor::zeros(&[k0]));
        }
        params.insert("rdwt.branch_logits", Tensor::zeros(&[cfg.ensemble.branches]));
        Ok(())
    }

    fn forward(&self, ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<FrontOutput> {
        let r = &cfg.rdwt;
        let (low, high) = r.prototype.filters();
        let z_mu = r.z_mu()?;
        let low = ctx.constant(Tensor::from_vec(low));
        let high = ctx.constant(Tensor::from_vec(high));
        let mut branches = Vec::with_capacity(cfg.ensemble.branches);
        let mut scale_reg: Option<Var> = None;
        let mut proto_reg: Option<Var> = None;
        for b in 0..cfg.ensemble.branches {
            let z = ctx.p(&format!("rdwt.b{b}.z"))?;
            let dl = ctx.p(&format!("rdwt.b{b}.delta_low"))?;
            let dh = ctx.p(&format!("rdwt.b{b}.delta_high"))?;
            let vars = BranchVars {
                z,
                theta: ctx.p(&format!("rdwt.b{b}.theta"))?,
                alpha: ctx.p(&format!("rdwt.b{b}.alpha"))?,
                proto_low: ctx.g.add(low, dl)?,
                proto_high: ctx.g.add(high, dh)?,
            };
            branches.push(vars);

            let s = scales(ctx.g, z, r.kappa, r.s_max)?;
            let reg = regularize(ctx.g, z, &z_mu, s, r.s_max, &cfg.reg)?;
            let pen = prototype_penalty(ctx.g, dl, dh, cfg.reg.lambda_proto);
            scale_reg = Some(match scale_reg {
                Some(a) => ctx.g.add(a, reg)?,
                None => reg,
            });
            proto_reg = Some(match proto_reg {
                Some(a) => ctx.g.add(a, pen)?,
                None => pen,
            });
        }
        let vars = EnsembleVars {
            branches,
            logits: ctx.p("rdwt.branch_logits")?,
        };
        let out = ensemble_forward(ctx.g, x, &vars, r, &cfg.ensemble, ctx.mode, ctx.rng)?;
        ctx.stats.zero_filters += out.zero_filters();
        ctx.stats.kept_branches = out.kept;
        Ok(FrontOutput {
            y: out.y,
            scale_reg,
            proto_reg,
        })
    }
}

/// `softmax(eta)`-weighted mix of the raw signal and the wavelet ensemble.
#[derive(Debug, Default)]
pub struct HybridFrontEnd;

impl FrontEnd for HybridFrontEnd {
    fn name(&self) -> &'static str {
        "hybrid"
    }

    fn init(&self, cfg: &ModelConfig, params: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        RdwtFrontEnd.init(cfg, params, rng)?;
        params.insert("fusion.eta", Tensor::zeros(&[2]));
        Ok(())
    }

    fn forward(&self, ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<FrontOutput> {
        let out = RdwtFrontEnd.forward(ctx, cfg, x)?;
        let eta = ctx.p("fusion.eta")?;
        Ok(FrontOutput {
            y: hybrid_fuse(ctx.g, x, out.y, eta)?,
            ..out
        })
    }
}
