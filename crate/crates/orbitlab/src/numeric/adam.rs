//! Bias-corrected adaptive-moment optimizer over flat parameter vectors.

use super::{NumericError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        // The reference setup quotes 1e-6 for billion-parameter models; at
        // desk scale the default is 3e-4 and every pipeline config overrides it.
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state paired with one flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub cfg: AdamConfig,
}

impl OptimState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        assert!((0.0..1.0).contains(&cfg.beta1) && (0.0..1.0).contains(&cfg.beta2));
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            cfg,
        }
    }
}

/// One in-place update. Refuses the step (leaving params and state untouched)
/// if any gradient entry is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(NumericError::ShapeMismatch {
            op: "adam_step",
            expected: vec![params.len()],
            got: vec![grads.len(), state.first_moment.len()],
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NumericError::NonFinite { op: "adam_step" });
    }
    let c = state.cfg;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = c.beta1 * *m + (1.0 - c.beta1) * grads[i];
        *v = c.beta2 * *v + (1.0 - c.beta2) * grads[i] * grads[i];
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        params[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
    }
    Ok(())
}
