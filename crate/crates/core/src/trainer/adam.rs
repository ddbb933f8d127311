use serde::{Deserialize, Serialize};

use crate::policy::MlpParams;

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(hidden: usize) -> Self {
        Self {
            m: MlpParams::zeros(hidden),
            v: MlpParams::zeros(hidden),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` along `-grads`.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
