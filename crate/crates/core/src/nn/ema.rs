//! Exponential moving average of network parameters.

use ndarray::Zip;

use super::network::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmaParams {
    pub shadow: NetworkParams,
    pub decay: f64,
}

impl EmaParams {
    /// Start tracking from a copy of `params`.
    pub fn new(params: &NetworkParams, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!(
                "EMA decay {decay} must lie in [0, 1)"
            )));
        }
        Ok(EmaParams {
            shadow: params.clone(),
            decay,
        })
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`.
    pub fn update(&mut self, params: &NetworkParams) -> Result<()> {
        if !self.shadow.same_shape(params) {
            return Err(Error::invalid(
                "EMA shadow and parameters have different shapes",
            ));
        }
        let d = self.decay;
        for (s, p) in self.shadow.tensors_mut().into_iter().zip(params.tensors()) {
            Zip::from(s)
                .and(p)
                .for_each(|s, &p| *s = d * *s + (1.0 - d) * p);
        }
        Ok(())
    }
}
