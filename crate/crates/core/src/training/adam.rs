//! Adam with bias correction over the flat parameter vector.

use crate::params::ParamStore;
use crate::training::TrainError;

/// Optimizer state aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradient entries,
/// naming the parameter block they belong to.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamStore,
    grad: &[f64],
    eta: f64,
) -> Result<(), TrainError> {
    assert_eq!(grad.len(), params.len(), "gradient misaligned with store");
    for (i, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(
                params.block_name_of_index(i).to_string(),
            ));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let values = params.values_mut();
    for i in 0..values.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= eta * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
