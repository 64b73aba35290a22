use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::total_loss;
use crate::backbone::Model;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::ndarr::{grad_check, GradCheckConfig, Graph, Mode, Tensor};
use crate::params::ParamStore;

/// Parameter groups every full-model check must cover.
pub const GRAD_GROUPS: [&str; 10] = [
    "z",
    "theta",
    "alpha",
    "prototypes",
    "eta",
    "branch_logits",
    "conv",
    "attention",
    "tcn",
    "classifier",
];

#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub group: String,
    pub tensors: usize,
    pub entries: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub passed: bool,
}

/// Finite-difference check of the full eval-mode loss, grouped by parameter
/// family. Scale logits are nudged off their anchors so no probe sits on an
/// interpolation knot.
pub fn model_gradcheck(
    cfg: &ModelConfig,
    samples: usize,
    seed: u64,
    tol: f64,
    max_entries: usize,
) -> Result<Vec<GroupCheck>> {
    let mut model = Model::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in &names {
        let t = model.params.get_mut(name)?;
        let jitter = match Model::group_of(name) {
            "z" => 0.05,
            "prototypes" | "eta" | "branch_logits" | "classifier" => 0.1,
            _ => 0.0,
        };
        for v in t.data_mut() {
            *v += jitter * rng.random_range(-1.0..1.0);
        }
    }
    let batch = 2;
    let x = Tensor::new(
        vec![batch, cfg.channels, samples],
        (0..batch * cfg.channels * samples).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.classes).collect();
    let buffers = model.buffers.clone();
    let f = |g: &mut Graph, p: &ParamStore| {
        let xv = g.constant(x.clone());
        let mut b = buffers.clone();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward_with(g, p, &mut b, xv, Mode::Eval, &mut r)?;
        Ok(total_loss(g, &out, &labels)?.total)
    };
    let check = GradCheckConfig {
        step: 1e-5,
        tol,
        floor: 1e-6,
        max_entries,
    };
    let report = grad_check(f, &model.params, &names, &check)?;
    let mut groups: Vec<GroupCheck> = Vec::new();
    for t in report.tensors {
        let group = Model::group_of(&t.name);
        let at = match groups.iter().position(|g| g.group == group) {
            Some(i) => i,
            None => {
                groups.push(GroupCheck {
                    group: group.to_string(),
                    tensors: 0,
                    entries: 0,
                    max_rel_err: 0.0,
                    worst: t.name.clone(),
                    passed: true,
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[at];
        g.tensors += 1;
        g.entries += t.checked;
        if t.max_rel_err >= g.max_rel_err {
            g.max_rel_err = t.max_rel_err;
            g.worst = t.name.clone();
        }
        g.passed = g.max_rel_err <= tol;
    }
    groups.sort_by_key(|g| GRAD_GROUPS.iter().position(|n| *n == g.group).unwrap_or(GRAD_GROUPS.len()));
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn raw_front_end_checks_backbone_groups() {
        let mut cfg = RunConfig::tiny().model;
        cfg.frontend = "raw".into();
        let groups = model_gradcheck(&cfg, 64, 1, 1e-3, 4).unwrap();
        let names: Vec<&str> = groups.iter().map(|g| g.group.as_str()).collect();
        assert_eq!(names, ["conv", "attention", "tcn", "classifier"]);
        assert!(groups.iter().all(|g| g.passed), "{groups:#?}");
    }
}
