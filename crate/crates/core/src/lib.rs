pub mod conformal;
pub mod data;
pub mod error;
pub mod experiments;
pub mod genmodels;
pub mod nn;
pub mod regions;
mod rng;
pub mod scoring;

pub use error::{Error, Result};
pub use rng::{mix_seed, stream_rng};
