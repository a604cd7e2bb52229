//! Fixtures shared by the benchmarks.

use trace_core::genmodels::{FlowModel, ModelSize, TrainConfig};
use trace_core::nn::{EmaParams, Matrix, NetworkParams};
use trace_core::scoring::{build_bank, fm_grid, CRNBank};
use trace_core::Result;

/// An untrained flow model with the given width; scoring cost does not depend on the weights.
pub fn flow_model(size: ModelSize, target_dim: usize, cond_dim: usize) -> Result<FlowModel> {
    let params = NetworkParams::init(7, size.architecture(target_dim, cond_dim)?)?;
    Ok(FlowModel {
        ema: EmaParams::new(&params, 0.999)?,
        params,
        target_dim,
        cond_dim,
        train: TrainConfig::default(),
        loss_history: Vec::new(),
    })
}

pub fn fm_bank(time_points: usize, repeats: usize, dim: usize) -> Result<CRNBank> {
    build_bank(3, &fm_grid(time_points)?, repeats, dim)
}

/// `n × d` grid of evenly spaced values in [-1, 1].
pub fn candidates(n: usize, d: usize) -> Matrix {
    Matrix::from_shape_fn((n, d), |(i, j)| {
        -1.0 + 2.0 * ((i * 7 + j * 3) % n) as f64 / n as f64
    })
}
