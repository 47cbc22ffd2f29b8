use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First/second moment accumulators for one parameter slice.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Grows the accumulators with zero moments (new parameters appended).
    pub fn resize(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam `{name}`: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("adam `{name}`: lr must be > 0")));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Optimizer {
            param: name.to_string(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3);
        adam_step("p", &mut p, &[0.0; 3], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        for _ in 0..50 {
            adam_step("p", &mut p, &[2.0, -0.5], &mut s, 0.01, &AdamConfig::default()).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn single_step_matches_textbook() {
        // m = 0.1 g, v = 0.001 g^2, mhat = g, vhat = g^2 -> p - lr * g / (|g| + eps)
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let g = 0.3;
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step("w", &mut p, &[g], &mut s, 0.05, &cfg).unwrap();
        let m: f64 = 0.1 * g;
        let v: f64 = 0.001 * g * g;
        let expected = 1.0 - 0.05 * (m / 0.1) / ((v / 0.001).sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - (1.0 - 0.05 * 0.3 / (0.3 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let err = adam_step("mixer.weight", &mut p, &[f64::NAN], &mut s, 0.1, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("mixer.weight"));
    }
}
