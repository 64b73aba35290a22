use crate::error::{Error, Result};
use crate::ndarr::{Graph, Var};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    pub tol: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared absolutely.
    pub floor: f64,
    /// Entries probed per tensor; larger tensors are sampled at an even stride.
    pub max_entries: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_entries: usize::MAX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    g.value(loss).item()
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences for each tensor in `names`.
///
/// `f` must register parameters through [`Graph::param`] (directly or via a
/// [`crate::params::Binder`]) and be deterministic: it is evaluated twice at
/// the base point and any difference is reported as a contract violation.
pub fn grad_check<F>(
    f: F,
    params: &ParamStore,
    names: &[String],
    cfg: &GradCheckConfig,
) -> Result<GradReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let base = g.value(loss).item()?;
    let again = evaluate(&f, params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "function under check is not deterministic ({base} vs {again}); disable dropout or seed it"
        )));
    }
    let mut grads = g.backward(loss)?;
    let analytic: Vec<(String, crate::ndarr::Tensor)> = g.param_grads(&mut grads);

    let mut tensors = Vec::with_capacity(names.len());
    let mut probe = params.clone();
    for name in names {
        let len = params.get(name)?.len();
        let grad = analytic
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; len]);
        let stride = len.div_ceil(cfg.max_entries.max(1)).max(1);
        let mut check = TensorCheck {
            name: name.clone(),
            checked: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in (0..len).step_by(stride) {
            let orig = params.get(name)?.data()[idx];
            probe.get_mut(name)?.data_mut()[idx] = orig + cfg.step;
            let up = evaluate(&f, &probe)?;
            probe.get_mut(name)?.data_mut()[idx] = orig - cfg.step;
            let down = evaluate(&f, &probe)?;
            probe.get_mut(name)?.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = relative_error(grad[idx], numeric, cfg.floor);
            check.checked += 1;
            if err > check.max_rel_err || check.checked == 1 {
                check.max_rel_err = err;
                check.worst_index = idx;
                check.analytic = grad[idx];
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradReport {
        tol: cfg.tol,
        tensors,
    })
}
