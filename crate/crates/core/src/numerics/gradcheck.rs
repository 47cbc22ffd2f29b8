use crate::error::{Error, Result};

const ABS_FLOOR: f64 = 1e-8;
// Entries more than 1e5 times smaller than the largest gradient sit at the
// rounding noise of the difference quotient; they are judged absolutely.
const SCALE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over parameters of |a - n| / max(|a|, |n|, floor), where
    /// floor = max(1e-8, 1e-5 * largest gradient magnitude)
    pub max_rel_error: f64,
    /// Index of the worst parameter.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences with step `eps`.
///
/// `loss_fn` maps a parameter vector to `(loss, gradient)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Check(format!("eps {eps} outside (0, 1e-2]")));
    }
    let (l0, analytic) = loss_fn(params)?;
    if !l0.is_finite() {
        return Err(Error::Check("loss is non-finite at the probe point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::Check(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = probe[k];
        probe[k] = orig + eps;
        let (lp, _) = loss_fn(&probe)?;
        probe[k] = orig - eps;
        let (lm, _) = loss_fn(&probe)?;
        probe[k] = orig;
        if !(lp.is_finite() && lm.is_finite()) {
            return Err(Error::Check(format!("loss non-finite probing parameter {k}")));
        }
        numeric.push((lp - lm) / (2.0 * eps));
    }
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = ABS_FLOOR.max(SCALE_FLOOR * scale);
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = k;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
