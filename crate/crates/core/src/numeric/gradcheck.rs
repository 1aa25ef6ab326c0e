use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Gradients, ParamStore};
use crate::error::{validation, Result};

const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over the checked entries)`.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients against central differences with step `1e-5`.
///
/// Frozen parameters are skipped. `objective` returns the loss and its analytic gradients. At most
/// `max_entries` entries of each parameter are checked, spread evenly.
pub fn grad_check<F>(store: &ParamStore, objective: F, max_entries: usize) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (loss, analytic) = objective(store)?;
    if !loss.is_finite() {
        return Err(validation(format!("loss is not finite: {loss}")));
    }
    let mut probe = store.clone();
    let mut per_param = Vec::with_capacity(store.len());
    for pi in (0..store.len()).filter(|i| !store.param(*i).is_frozen()) {
        let n = store.param(pi).len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        let mut worst: f64 = 0.0;
        for e in (0..n).step_by(stride) {
            let orig = store.param(pi).data[e];
            probe.param_mut(pi).data[e] = orig + STEP;
            let plus = objective(&probe)?.0;
            probe.param_mut(pi).data[e] = orig - STEP;
            let minus = objective(&probe)?.0;
            probe.param_mut(pi).data[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(validation(format!("loss is not finite near {}[{e}]", store.param(pi).name)));
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            let ga = analytic.get(pi)[e];
            let err = libm::fabs(ga - numeric) / f64::max(1e-8, libm::fabs(ga) + libm::fabs(numeric));
            worst = worst.max(err);
        }
        per_param.push((store.param(pi).name.clone(), worst));
    }
    Ok(GradCheckReport { per_param })
}
