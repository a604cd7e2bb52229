//! Adam with bias correction.

use ndarray::Zip;

use super::network::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first: NetworkParams,
    pub second: NetworkParams,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        AdamState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One Adam update of `params` in place.
///
/// Gradients are checked before anything is written, so a rejected step leaves
/// both `params` and `state` untouched.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(Error::invalid(
            "parameter, gradient and optimizer shapes differ",
        ));
    }
    for (name, g) in grads.tensor_names().iter().zip(grads.tensors()) {
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient {bad} in layer {name}"
            )));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let step_size = lr / bc1;
    let params_t = params.tensors_mut();
    let m_t = state.first.tensors_mut();
    let v_t = state.second.tensors_mut();
    for (((p, g), m), v) in params_t.into_iter().zip(grads.tensors()).zip(m_t).zip(v_t) {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step_size * *m / ((*v / bc2).sqrt() + eps);
        });
    }
    Ok(())
}
