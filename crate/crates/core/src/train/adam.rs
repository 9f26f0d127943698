//! Adam optimizer over the model's canonical parameter order.

use crate::model::ModelParams;

/// First/second-moment accumulators, aligned with the flattened parameter
/// vector. `t` counts completed steps for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    /// Zero-initialized state for `n` parameters.
    pub fn new(n: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One Adam update with bias correction. Deterministic; parameter order
    /// is the canonical tensor order shared with the gradient container.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let m = &mut self.m;
        let v = &mut self.v;
        let mut i = 0;
        params.zip_mut(grads, |p, g| {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            i += 1;
        });
        debug_assert_eq!(i, m.len(), "optimizer state misaligned with parameters");
    }
}
