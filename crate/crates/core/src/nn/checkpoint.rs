//! JSON parameter checkpoints tagged `trace-ckpt-v1`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, Matrix, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "trace-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &NetworkParams) -> Self {
        let layers = params
            .tensor_names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| LayerRecord {
                name,
                shape: [t.nrows(), t.ncols()],
                values: t.iter().copied().collect(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture: params.architecture(),
            layers,
        }
    }

    /// Rebuild parameters, checking the header, names and shapes.
    pub fn to_params(&self) -> Result<NetworkParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse {
                location: "format".into(),
                message: format!("expected {CHECKPOINT_FORMAT}, found {}", self.format),
            });
        }
        // Build a template so names and shapes come from one place.
        let mut params = NetworkParams::init(0, self.architecture)?;
        let names = params.tensor_names();
        if names.len() != self.layers.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} layers, architecture needs {}",
                self.layers.len(),
                names.len()
            )));
        }
        for ((name, tensor), rec) in names.iter().zip(params.tensors_mut()).zip(&self.layers) {
            if &rec.name != name {
                return Err(Error::Schema(format!(
                    "expected layer {name}, found {}",
                    rec.name
                )));
            }
            if rec.shape != [tensor.nrows(), tensor.ncols()] || rec.values.len() != tensor.len() {
                return Err(Error::Schema(format!(
                    "layer {name} has wrong shape {:?}",
                    rec.shape
                )));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "layer {name} contains non-finite values"
                )));
            }
            *tensor = Matrix::from_shape_vec((rec.shape[0], rec.shape[1]), rec.values.clone())
                .expect("shape checked");
        }
        Ok(params)
    }
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    let json =
        serde_json::to_string(&Checkpoint::from_params(params)).expect("checkpoint serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    ckpt.to_params()
}
