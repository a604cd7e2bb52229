use std::path::{Path, PathBuf};

use ndarray::{ArrayView2, Zip};
use rand_distr::{Distribution, StandardNormal};

use super::schedule::{NoiseSchedule, ScheduleSpec};
use super::{
    checkpoint_file_name, fit_network, gather, model_paths, read_sidecar, write_sidecar, ModelKind,
    ModelSidecar, NoisePredictor, TrainConfig, MODEL_FORMAT,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{load_params, save_params, Architecture, Batch, EmaParams, Matrix, NetworkParams};
use crate::rng::{stream_rng, STREAM_SAMPLE};

/// Conditional noise-prediction model. Inference uses the EMA weights.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub params: NetworkParams,
    pub ema: EmaParams,
    pub schedule: NoiseSchedule,
    pub target_dim: usize,
    pub cond_dim: usize,
    pub train: TrainConfig,
    pub loss_history: Vec<f64>,
}

impl DiffusionModel {
    pub fn inference(&self) -> &NetworkParams {
        &self.ema.shadow
    }

    /// Write the EMA checkpoint and the JSON sidecar under `stem`.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (ckpt, meta) = model_paths(stem);
        save_params(self.inference(), &ckpt)?;
        write_sidecar(
            &meta,
            &ModelSidecar {
                format: MODEL_FORMAT.into(),
                kind: ModelKind::Ddpm,
                schedule: Some(self.schedule.spec()),
                target_dim: self.target_dim,
                cond_dim: self.cond_dim,
                seed: self.train.seed,
                train: self.train,
                checkpoint: checkpoint_file_name(&ckpt),
                residual_covariance: None,
            },
        )?;
        Ok((ckpt, meta))
    }

    /// Load a model written by [`DiffusionModel::save`]. Raw and EMA weights are both set to the stored weights.
    pub fn load(stem: &Path) -> Result<Self> {
        let (ckpt, meta) = model_paths(stem);
        let side = read_sidecar(&meta, ModelKind::Ddpm)?;
        let spec = side.schedule.ok_or_else(|| {
            Error::Schema(format!(
                "{}: diffusion model without schedule",
                meta.display()
            ))
        })?;
        let params = load_params(&ckpt)?;
        let arch = params.architecture();
        if arch.input_dim != side.target_dim || arch.cond_dim != side.cond_dim {
            return Err(Error::Schema(format!(
                "{}: checkpoint shape disagrees with sidecar dimensions",
                ckpt.display()
            )));
        }
        Ok(DiffusionModel {
            ema: EmaParams::new(&params, side.train.ema_decay)?,
            params,
            schedule: spec.build()?,
            target_dim: side.target_dim,
            cond_dim: side.cond_dim,
            train: side.train,
            loss_history: Vec::new(),
        })
    }
}

impl NoisePredictor for DiffusionModel {
    fn target_dim(&self) -> usize {
        self.target_dim
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn predict_noise(&self, states: ArrayView2<f64>, step: usize, x: &[f64]) -> Result<Matrix> {
        self.inference()
            .forward_shared(states, self.schedule.normalized_time(step), x)
    }

    fn predict_noise_rows(
        &self,
        states: ArrayView2<f64>,
        step: usize,
        xs: ArrayView2<f64>,
    ) -> Result<Matrix> {
        let t = vec![self.schedule.normalized_time(step); states.nrows()];
        self.inference().forward_batch(states, &t, xs)
    }
}

/// Train with the default schedule (linear beta, 1e-4 to 0.02, T = 1000).
pub fn train_diffusion(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: Architecture,
) -> Result<DiffusionModel> {
    train_diffusion_with(dataset, config, arch, &ScheduleSpec::default())
}

pub fn train_diffusion_with(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: Architecture,
    schedule: &ScheduleSpec,
) -> Result<DiffusionModel> {
    if arch.input_dim != dataset.y_dim() {
        return Err(Error::invalid(
            "architecture input width must equal the target dimension",
        ));
    }
    let schedule = schedule.build()?;
    let steps = schedule.steps();
    let q = dataset.y_dim();
    let trained = fit_network(dataset, config, arch, |rows, rng| {
        let y = gather(&dataset.y, rows);
        let conds = gather(&dataset.x, rows);
        let n = rows.len();
        let mut states = Matrix::zeros((n, q));
        let mut targets = Matrix::zeros((n, q));
        let mut times = ndarray::Array1::zeros(n);
        for i in 0..n {
            let step = rand::Rng::gen_range(rng, 1..=steps);
            let ab = schedule.alpha_bar[step - 1];
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            times[i] = schedule.normalized_time(step);
            for j in 0..q {
                let e: f64 = StandardNormal.sample(rng);
                targets[[i, j]] = e;
                states[[i, j]] = a * y[[i, j]] + b * e;
            }
        }
        Batch {
            states,
            times,
            conds,
            targets,
        }
    })?;
    Ok(DiffusionModel {
        params: trained.params,
        ema: trained.ema,
        schedule,
        target_dim: q,
        cond_dim: dataset.x_dim(),
        train: *config,
        loss_history: trained.loss_history,
    })
}

/// One ancestral sample over all T steps.
pub fn ddpm_sample<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let out = ddpm_sample_batch(model, x, 1, seed)?;
    Ok(out.into_raw_vec_and_offset().0)
}

/// `n` ancestral samples over all T steps.
pub fn ddpm_sample_batch<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &[f64],
    n: usize,
    seed: u64,
) -> Result<Matrix> {
    ddpm_sample_respaced(model, x, n, model.schedule().steps(), seed)
}

/// Ancestral sampling on `steps` evenly spaced steps `tau_i = round(i T / steps)`, with
/// `beta'_i = 1 - alpha_bar(tau_i) / alpha_bar(tau_{i-1})`. `steps = T` is the standard sampler.
pub fn ddpm_sample_respaced<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &[f64],
    n: usize,
    steps: usize,
    seed: u64,
) -> Result<Matrix> {
    let xs = ndarray::aview1(x).insert_axis(ndarray::Axis(0));
    let mut out = respaced(model, xs, n, steps, &[seed], |y, step, _| {
        model.predict_noise(y, step, x)
    })?;
    Ok(out.pop().expect("one input"))
}

/// `k` samples for each row of `xs`, the i-th seeded by `seeds[i]`; one network call per step
/// covers all inputs. Each block equals [`ddpm_sample_respaced`] for that input and seed.
pub fn ddpm_sample_paired<M: NoisePredictor + ?Sized>(
    model: &M,
    xs: ArrayView2<f64>,
    k: usize,
    steps: usize,
    seeds: &[u64],
) -> Result<Vec<Matrix>> {
    if seeds.len() != xs.nrows() {
        return Err(Error::invalid("need one seed per input row"));
    }
    let rows: Vec<usize> = (0..xs.nrows())
        .flat_map(|i| std::iter::repeat(i).take(k))
        .collect();
    let cond = xs.select(ndarray::Axis(0), &rows);
    respaced(model, xs, k, steps, seeds, |y, step, _| {
        model.predict_noise_rows(y, step, cond.view())
    })
}

fn respaced<M, F>(
    model: &M,
    xs: ArrayView2<f64>,
    k: usize,
    steps: usize,
    seeds: &[u64],
    mut eps_fn: F,
) -> Result<Vec<Matrix>>
where
    M: NoisePredictor + ?Sized,
    F: FnMut(ArrayView2<f64>, usize, ArrayView2<f64>) -> Result<Matrix>,
{
    let schedule = model.schedule();
    let total = schedule.steps();
    if k == 0 || steps == 0 || steps > total {
        return Err(Error::invalid(format!(
            "need n >= 1 and 1 <= steps <= {total}, got n={k}, steps={steps}"
        )));
    }
    let q = model.target_dim();
    let m = xs.nrows();
    let taus: Vec<usize> = (1..=steps)
        .map(|i| ((i * total) as f64 / steps as f64).round() as usize)
        .collect();
    let mut rngs: Vec<_> = seeds
        .iter()
        .map(|&s| stream_rng(s, STREAM_SAMPLE))
        .collect();
    let mut y = Matrix::zeros((m * k, q));
    for (i, rng) in rngs.iter_mut().enumerate() {
        for v in y.slice_mut(ndarray::s![i * k..(i + 1) * k, ..]).iter_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    for i in (0..steps).rev() {
        let tau = taus[i];
        let ab = schedule.alpha_bar[tau - 1];
        let ab_prev = if i == 0 {
            1.0
        } else {
            schedule.alpha_bar[taus[i - 1] - 1]
        };
        let beta = 1.0 - ab / ab_prev;
        let eps = eps_fn(y.view(), tau, xs)?;
        if eps.dim() != (m * k, q) {
            return Err(Error::invalid("noise predictor returned the wrong shape"));
        }
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / (1.0 - beta).sqrt();
        Zip::from(&mut y)
            .and(&eps)
            .for_each(|y, &e| *y = inv * (*y - coef * e));
        if i > 0 {
            let sd = beta.sqrt();
            for (p, rng) in rngs.iter_mut().enumerate() {
                for v in y.slice_mut(ndarray::s![p * k..(p + 1) * k, ..]).iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sd * z;
                }
            }
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "diffusion sampler produced non-finite values",
        ));
    }
    Ok((0..m)
        .map(|p| y.slice(ndarray::s![p * k..(p + 1) * k, ..]).to_owned())
        .collect())
}
