use crate::error::{Error, Result};

/// Numerically stable softmax (max is subtracted before exponentiation).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("softmax input must be finite".into()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// Softmax restricted to entries where `mask` is true; masked entries get
/// weight exactly zero. Returns `None` when nothing is unmasked.
pub fn masked_softmax(v: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
    let max = v
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let e: Vec<f64> = v
        .iter()
        .zip(mask)
        .map(|(x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    Some(e.into_iter().map(|x| x / s).collect())
}

/// Given softmax output `y` and dL/dy, returns dL/dv.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - inner)).collect()
}
