//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::numcore::tensor::ParamSet;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Numerical gradient of `loss_fn` by central differences with step `eps`.
pub fn central_difference<F>(loss_fn: F, params: &ParamSet, eps: f64) -> Result<ParamSet>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let len = params.require(name)?.len();
        for i in 0..len {
            let original = params.require(name)?.data()[i];
            set(&mut probe, name, i, original + eps);
            let up = loss_fn(&probe)?;
            set(&mut probe, name, i, original - eps);
            let down = loss_fn(&probe)?;
            set(&mut probe, name, i, original);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("loss at perturbed coordinate {name}[{i}]"),
                });
            }
            out.get_mut(name).expect("same layout").data_mut()[i] = (up - down) / (2.0 * eps);
        }
    }
    Ok(out)
}

fn set(params: &mut ParamSet, name: &str, i: usize, value: f64) {
    params.get_mut(name).expect("known parameter").data_mut()[i] = value;
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences of its value.
pub fn grad_check<F>(loss_fn: F, params: &ParamSet, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    let (_, analytic) = loss_fn(params)?;
    params.check_same_layout(&analytic)?;
    let numeric = central_difference(|p| loss_fn(p).map(|r| r.0), params, eps)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: params.num_values(),
    };
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (i, (&ga, &gn)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (ga - gn).abs() / gn.abs().max(1.0);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}
