//! Adam over flat parameter slices and the learning-rate schedules of the trainer.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

impl Adam {
    /// One bias-corrected update. `step` counts from 1.
    pub fn update(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: u64) {
        debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Log-linear interpolation from `start` to `end` over `steps`, constant afterwards.
pub fn exponential_lr(start: f64, end: f64, step: usize, steps: usize) -> f64 {
    if steps == 0 || start <= 0.0 || end <= 0.0 {
        return if steps == 0 { end } else { start };
    }
    let t = (step as f64 / steps as f64).clamp(0.0, 1.0);
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}
