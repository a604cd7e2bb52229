//! Conditional DDPM and flow-matching models.

mod diffusion;
mod flow;
pub mod schedule;

use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, AdamConfig, AdamState, Architecture, Batch, EmaParams, Matrix, NetworkParams,
};
use crate::rng::{stream_rng, STREAM_INIT, STREAM_TRAIN};

pub use diffusion::{
    ddpm_sample, ddpm_sample_batch, ddpm_sample_paired, ddpm_sample_respaced, train_diffusion,
    train_diffusion_with, DiffusionModel,
};
pub use flow::{euler_integrate, fm_sample, fm_sample_batch, train_fm, FlowModel};
pub use schedule::{diffuse, fm_interpolate, make_schedule, NoiseSchedule, ScheduleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            ema_decay: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::invalid(format!(
                "ema_decay {} outside (0, 1)",
                self.ema_decay
            )));
        }
        Ok(())
    }
}

/// Hidden width and block count; the input and conditioning widths come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSize {
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for ModelSize {
    fn default() -> Self {
        ModelSize {
            hidden: 128,
            blocks: 4,
        }
    }
}

impl ModelSize {
    pub fn architecture(&self, target_dim: usize, cond_dim: usize) -> Result<Architecture> {
        Architecture::new(target_dim, cond_dim, self.hidden, self.blocks)
    }
}

/// Output of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub params: NetworkParams,
    pub ema: EmaParams,
    /// Mean minibatch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Minibatch Adam with EMA tracking.
///
/// `make_batch` receives the row indices of one minibatch and the training
/// generator, and returns the regression batch for those rows.
pub fn fit_network<F>(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: Architecture,
    mut make_batch: F,
) -> Result<Trained>
where
    F: FnMut(&[usize], &mut ChaCha8Rng) -> Batch,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if arch.cond_dim != dataset.x_dim() {
        return Err(Error::invalid(format!(
            "architecture expects {} inputs, data has {}",
            arch.cond_dim,
            dataset.x_dim()
        )));
    }
    let mut params = NetworkParams::init(stream_rng(config.seed, STREAM_INIT).next_seed(), arch)?;
    let mut ema = EmaParams::new(&params, config.ema_decay)?;
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut rng = stream_rng(config.seed, STREAM_TRAIN);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(config.batch_size) {
            let at = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            };
            let batch = make_batch(rows, &mut rng);
            let (loss, grads) = params.loss_and_grad(&batch).map_err(at)?;
            adam_step(&mut params, &grads, &mut adam, config.lr).map_err(at)?;
            ema.update(&params)?;
            total += loss;
            batches += 1;
            step += 1;
        }
        history.push(total / batches as f64);
        if (epoch + 1) % 50 == 0 {
            log::debug!("epoch {}: loss {:.5}", epoch + 1, total / batches as f64);
        }
    }
    Ok(Trained {
        params,
        ema,
        loss_history: history,
    })
}

trait NextSeed {
    fn next_seed(self) -> u64;
}

impl NextSeed for ChaCha8Rng {
    fn next_seed(mut self) -> u64 {
        rand::RngCore::next_u64(&mut self)
    }
}

/// Gather the rows of `m` named by `rows`.
pub(crate) fn gather(m: &Matrix, rows: &[usize]) -> Matrix {
    m.select(ndarray::Axis(0), rows)
}

/// Noise-prediction network `eps(y_t, t, x)` evaluated on a batch sharing one step and input.
pub trait NoisePredictor: Sync {
    fn target_dim(&self) -> usize;
    fn schedule(&self) -> &NoiseSchedule;
    fn predict_noise(&self, states: ArrayView2<f64>, step: usize, x: &[f64]) -> Result<Matrix>;

    /// As [`predict_noise`](Self::predict_noise) with one input row per state row.
    fn predict_noise_rows(
        &self,
        states: ArrayView2<f64>,
        step: usize,
        xs: ArrayView2<f64>,
    ) -> Result<Matrix> {
        per_row(states, xs, |s, x| self.predict_noise(s, step, x))
    }
}

/// Velocity network `v(y_t, t, x)` evaluated on a batch sharing one time and input.
pub trait VelocityPredictor: Sync {
    fn target_dim(&self) -> usize;
    fn predict_velocity(&self, states: ArrayView2<f64>, t: f64, x: &[f64]) -> Result<Matrix>;

    /// As [`predict_velocity`](Self::predict_velocity) with one input row per state row.
    fn predict_velocity_rows(
        &self,
        states: ArrayView2<f64>,
        t: f64,
        xs: ArrayView2<f64>,
    ) -> Result<Matrix> {
        per_row(states, xs, |s, x| self.predict_velocity(s, t, x))
    }
}

fn per_row<F>(states: ArrayView2<f64>, xs: ArrayView2<f64>, mut f: F) -> Result<Matrix>
where
    F: FnMut(ArrayView2<f64>, &[f64]) -> Result<Matrix>,
{
    if states.nrows() != xs.nrows() {
        return Err(Error::invalid("need one input row per state row"));
    }
    let mut out = Matrix::zeros(states.dim());
    for (i, x) in xs.outer_iter().enumerate() {
        let x = x.to_vec();
        let row = f(states.slice(ndarray::s![i..i + 1, ..]), &x)?;
        if row.dim() != (1, states.ncols()) {
            return Err(Error::invalid("model returned the wrong output shape"));
        }
        out.row_mut(i).assign(&row.row(0));
    }
    Ok(out)
}

pub const MODEL_FORMAT: &str = "trace-model-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ddpm,
    Fm,
    Regressor,
}

/// JSON sidecar written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format: String,
    pub kind: ModelKind,
    pub schedule: Option<ScheduleSpec>,
    pub target_dim: usize,
    pub cond_dim: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub checkpoint: String,
    /// Residual covariance of a point regressor, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_covariance: Option<Vec<Vec<f64>>>,
}

pub(crate) fn checkpoint_file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Paths `<stem>.ckpt.json` and `<stem>.model.json`.
pub fn model_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{s}.ckpt.json")),
        PathBuf::from(format!("{s}.model.json")),
    )
}

pub(crate) fn write_sidecar(path: &Path, sidecar: &ModelSidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_sidecar(path: &Path, expect: ModelKind) -> Result<ModelSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: ModelSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if sidecar.format != MODEL_FORMAT {
        return Err(Error::Schema(format!(
            "{}: unsupported model format {:?}",
            path.display(),
            sidecar.format
        )));
    }
    if sidecar.kind != expect {
        return Err(Error::Schema(format!(
            "{}: expected a {expect:?} model, found {:?}",
            path.display(),
            sidecar.kind
        )));
    }
    Ok(sidecar)
}
