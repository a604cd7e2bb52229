//! Dense network substrate: FiLM residual MLP, reverse-mode gradients, Adam and EMA.

mod adam;
mod checkpoint;
mod ema;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_params, save_params, Checkpoint, LayerRecord, CHECKPOINT_FORMAT};
pub use ema::EmaParams;
pub use network::{
    time_features, Architecture, Batch, Dense, FilmBlock, Matrix, NetworkParams, TIME_FEATURES,
    TIME_FREQUENCIES,
};
