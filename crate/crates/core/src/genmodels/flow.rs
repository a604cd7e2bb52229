use std::path::{Path, PathBuf};

use ndarray::{ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    checkpoint_file_name, fit_network, gather, model_paths, read_sidecar, write_sidecar, ModelKind,
    ModelSidecar, TrainConfig, VelocityPredictor, MODEL_FORMAT,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{load_params, save_params, Architecture, Batch, EmaParams, Matrix, NetworkParams};
use crate::rng::{stream_rng, STREAM_SAMPLE};

/// Conditional velocity model on the straight path from noise to data. Inference uses the EMA weights.
#[derive(Debug, Clone)]
pub struct FlowModel {
    pub params: NetworkParams,
    pub ema: EmaParams,
    pub target_dim: usize,
    pub cond_dim: usize,
    pub train: TrainConfig,
    pub loss_history: Vec<f64>,
}

impl FlowModel {
    pub fn inference(&self) -> &NetworkParams {
        &self.ema.shadow
    }

    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (ckpt, meta) = model_paths(stem);
        save_params(self.inference(), &ckpt)?;
        write_sidecar(
            &meta,
            &ModelSidecar {
                format: MODEL_FORMAT.into(),
                kind: ModelKind::Fm,
                schedule: None,
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

    pub fn load(stem: &Path) -> Result<Self> {
        let (ckpt, meta) = model_paths(stem);
        let side = read_sidecar(&meta, ModelKind::Fm)?;
        let params = load_params(&ckpt)?;
        let arch = params.architecture();
        if arch.input_dim != side.target_dim || arch.cond_dim != side.cond_dim {
            return Err(Error::Schema(format!(
                "{}: checkpoint shape disagrees with sidecar dimensions",
                ckpt.display()
            )));
        }
        Ok(FlowModel {
            ema: EmaParams::new(&params, side.train.ema_decay)?,
            params,
            target_dim: side.target_dim,
            cond_dim: side.cond_dim,
            train: side.train,
            loss_history: Vec::new(),
        })
    }
}

impl VelocityPredictor for FlowModel {
    fn target_dim(&self) -> usize {
        self.target_dim
    }

    fn predict_velocity(&self, states: ArrayView2<f64>, t: f64, x: &[f64]) -> Result<Matrix> {
        self.inference().forward_shared(states, t, x)
    }

    fn predict_velocity_rows(
        &self,
        states: ArrayView2<f64>,
        t: f64,
        xs: ArrayView2<f64>,
    ) -> Result<Matrix> {
        self.inference()
            .forward_batch(states, &vec![t; states.nrows()], xs)
    }
}

/// Regress `v(y_t, t, x)` onto `y - y0` with `t ~ U[0, 1]`, `y0 ~ N(0, I)`.
pub fn train_fm(dataset: &Dataset, config: &TrainConfig, arch: Architecture) -> Result<FlowModel> {
    if arch.input_dim != dataset.y_dim() {
        return Err(Error::invalid(
            "architecture input width must equal the target dimension",
        ));
    }
    let q = dataset.y_dim();
    let trained = fit_network(dataset, config, arch, |rows, rng| {
        let y = gather(&dataset.y, rows);
        let conds = gather(&dataset.x, rows);
        let n = rows.len();
        let mut states = Matrix::zeros((n, q));
        let mut targets = Matrix::zeros((n, q));
        let mut times = ndarray::Array1::zeros(n);
        for i in 0..n {
            let t: f64 = rng.gen();
            times[i] = t;
            for j in 0..q {
                let y0: f64 = StandardNormal.sample(rng);
                states[[i, j]] = (1.0 - t) * y0 + t * y[[i, j]];
                targets[[i, j]] = y[[i, j]] - y0;
            }
        }
        Batch {
            states,
            times,
            conds,
            targets,
        }
    })?;
    Ok(FlowModel {
        params: trained.params,
        ema: trained.ema,
        target_dim: q,
        cond_dim: dataset.x_dim(),
        train: *config,
        loss_history: trained.loss_history,
    })
}

/// Explicit Euler for `dy/dt = field(y, t)` on `n_steps` uniform steps over [0, 1].
pub fn euler_integrate<F>(mut field: F, y0: Matrix, n_steps: usize) -> Result<Matrix>
where
    F: FnMut(ArrayView2<f64>, f64) -> Result<Matrix>,
{
    if n_steps == 0 {
        return Err(Error::invalid("Euler integration needs at least one step"));
    }
    let h = 1.0 / n_steps as f64;
    let mut y = y0;
    for k in 0..n_steps {
        let v = field(y.view(), k as f64 * h)?;
        if v.dim() != y.dim() {
            return Err(Error::invalid("velocity field returned the wrong shape"));
        }
        Zip::from(&mut y).and(&v).for_each(|y, &v| *y += h * v);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("flow sampler produced non-finite values"));
    }
    Ok(y)
}

pub fn fm_sample<M: VelocityPredictor + ?Sized>(
    model: &M,
    x: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(fm_sample_batch(model, x, 1, n_steps, seed)?
        .into_raw_vec_and_offset()
        .0)
}

pub fn fm_sample_batch<M: VelocityPredictor + ?Sized>(
    model: &M,
    x: &[f64],
    n: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = stream_rng(seed, STREAM_SAMPLE);
    let y0 =
        Matrix::from_shape_simple_fn((n, model.target_dim()), || StandardNormal.sample(&mut rng));
    euler_integrate(|y, t| model.predict_velocity(y, t, x), y0, n_steps)
}
