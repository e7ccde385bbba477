use serde::{Deserialize, Serialize};

use crate::error::{AdrlError, Result};

/// Adam moment estimates for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One bias-corrected descent step: `params -= lr * m̂ / (sqrt(v̂) + eps)`.
    /// Only entries with `mask[i]` set are touched when a mask is given.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, mask: Option<&[bool]>) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(AdrlError::parameter("Adam state and gradient lengths differ"));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(AdrlError::numerical(format!("non-finite gradient entry {i}")));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
