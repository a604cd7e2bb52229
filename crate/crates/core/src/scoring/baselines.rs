//! Shape-restricted baselines around a point regressor, and the PCP sample-ball score.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView2, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::genmodels::{
    fit_network, model_paths, ModelKind, ModelSidecar, ModelSize, TrainConfig, MODEL_FORMAT,
};
use crate::nn::{load_params, save_params, Batch, Matrix, NetworkParams};

/// Mean regressor with a residual covariance estimated on its training data.
///
/// The regressor is the conditional network evaluated with a zero state at time 0.
#[derive(Debug, Clone)]
pub struct PointPredictor {
    pub net: NetworkParams,
    pub covariance: Matrix,
    pub scales: Vec<f64>,
    chol: DMatrix<f64>,
    train: TrainConfig,
}

impl PointPredictor {
    /// Wrap a regressor and a covariance; errors if the covariance is not positive definite.
    pub fn new(net: NetworkParams, covariance: Matrix) -> Result<Self> {
        let q = net.architecture().input_dim;
        if covariance.dim() != (q, q) {
            return Err(Error::invalid(format!("covariance must be {q}x{q}")));
        }
        let asym = covariance
            .indexed_iter()
            .map(|((i, j), v)| (v - covariance[[j, i]]).abs())
            .fold(0.0, f64::max);
        if asym > 1e-9 * covariance.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
            return Err(Error::numeric("residual covariance is not symmetric"));
        }
        let m = DMatrix::from_fn(q, q, |i, j| covariance[[i, j]]);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::numeric("residual covariance is not positive definite"))?
            .l();
        let scales = (0..q).map(|j| covariance[[j, j]].sqrt()).collect();
        Ok(PointPredictor {
            net,
            covariance,
            scales,
            chol,
            train: TrainConfig::default(),
        })
    }

    /// Fit the regressor by squared loss, then estimate the residual covariance (denominator n - 1).
    pub fn fit(train: &Dataset, config: &TrainConfig, size: ModelSize) -> Result<Self> {
        let q = train.y_dim();
        let arch = size.architecture(q, train.x_dim())?;
        let trained = fit_network(train, config, arch, |rows, _| {
            let n = rows.len();
            Batch {
                states: Matrix::zeros((n, q)),
                times: ndarray::Array1::zeros(n),
                conds: train.x.select(Axis(0), rows),
                targets: train.y.select(Axis(0), rows),
            }
        })?;
        let net = trained.ema.shadow;
        let pred = predict_with(&net, train.x.view())?;
        let resid = &train.y - &pred;
        let n = resid.nrows();
        if n < 2 {
            return Err(Error::invalid(
                "residual covariance needs at least two training rows",
            ));
        }
        let mean = resid.mean_axis(Axis(0)).expect("non-empty");
        let centred = &resid - &mean;
        let cov = centred.t().dot(&centred) / (n - 1) as f64;
        let mut p = PointPredictor::new(net, cov)?;
        p.train = *config;
        Ok(p)
    }

    pub fn target_dim(&self) -> usize {
        self.scales.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = ndarray::aview1(x).insert_axis(Axis(0));
        Ok(self.predict_batch(xs)?.into_raw_vec_and_offset().0)
    }

    pub fn predict_batch(&self, xs: ArrayView2<f64>) -> Result<Matrix> {
        predict_with(&self.net, xs)
    }

    /// `sqrt(r' Sigma^-1 r)` through the Cholesky factor.
    pub fn mahalanobis(&self, residual: &[f64]) -> Result<f64> {
        if residual.len() != self.target_dim() {
            return Err(Error::invalid(
                "residual dimension differs from the target dimension",
            ));
        }
        let r = DVector::from_column_slice(residual);
        let z = self
            .chol
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::numeric("singular covariance factor"))?;
        Ok(z.norm())
    }

    /// `max_j |r_j| / sigma_j`.
    pub fn standardized_max(&self, residual: &[f64]) -> Result<f64> {
        if residual.len() != self.target_dim() {
            return Err(Error::invalid(
                "residual dimension differs from the target dimension",
            ));
        }
        Ok(residual
            .iter()
            .zip(&self.scales)
            .map(|(r, s)| r.abs() / s)
            .fold(0.0, f64::max))
    }

    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (ckpt, meta) = model_paths(stem);
        save_params(&self.net, &ckpt)?;
        let arch = self.net.architecture();
        let side = ModelSidecar {
            format: MODEL_FORMAT.into(),
            kind: ModelKind::Regressor,
            schedule: None,
            target_dim: arch.input_dim,
            cond_dim: arch.cond_dim,
            seed: self.train.seed,
            train: self.train,
            checkpoint: crate::genmodels::checkpoint_file_name(&ckpt),
            residual_covariance: Some(self.covariance.outer_iter().map(|r| r.to_vec()).collect()),
        };
        crate::genmodels::write_sidecar(&meta, &side)?;
        Ok((ckpt, meta))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (ckpt, meta) = model_paths(stem);
        let side = crate::genmodels::read_sidecar(&meta, ModelKind::Regressor)?;
        let rows = side.residual_covariance.ok_or_else(|| {
            Error::Schema(format!("{}: regressor without covariance", meta.display()))
        })?;
        let q = rows.len();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::Schema(format!(
                "{}: covariance is not square",
                meta.display()
            )));
        }
        let cov = Matrix::from_shape_vec((q, q), rows.concat()).expect("square");
        let mut p = PointPredictor::new(load_params(&ckpt)?, cov)?;
        p.train = side.train;
        Ok(p)
    }
}

fn predict_with(net: &NetworkParams, xs: ArrayView2<f64>) -> Result<Matrix> {
    let n = xs.nrows();
    let q = net.architecture().input_dim;
    net.forward_batch(Matrix::zeros((n, q)).view(), &vec![0.0; n], xs)
}

pub fn ellipsoid_score(pred: &PointPredictor, x: &[f64], y: &[f64]) -> Result<f64> {
    let r = residual(pred, x, y)?;
    pred.mahalanobis(&r)
}

pub fn rectangle_score(pred: &PointPredictor, x: &[f64], y: &[f64]) -> Result<f64> {
    let r = residual(pred, x, y)?;
    pred.standardized_max(&r)
}

fn residual(pred: &PointPredictor, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let yhat = pred.predict(x)?;
    if y.len() != yhat.len() {
        return Err(Error::invalid(
            "target dimension differs from the predictor output",
        ));
    }
    Ok(y.iter().zip(&yhat).map(|(a, b)| a - b).collect())
}

/// Minimum Euclidean distance from `y` to any sample.
pub fn pcp_score(samples: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("PCP needs at least one sample"));
    }
    let mut best = f64::INFINITY;
    for s in samples {
        if s.len() != y.len() {
            return Err(Error::invalid(
                "sample dimension differs from the target dimension",
            ));
        }
        let d: f64 = s.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        best = best.min(d);
    }
    Ok(best.sqrt())
}

/// [`pcp_score`] for every row of `ys` against the rows of `samples`.
pub fn pcp_scores(samples: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<Vec<f64>> {
    if samples.nrows() == 0 {
        return Err(Error::invalid("PCP needs at least one sample"));
    }
    if samples.ncols() != ys.ncols() {
        return Err(Error::invalid(
            "sample dimension differs from the target dimension",
        ));
    }
    Ok(ys
        .axis_iter(Axis(0))
        .map(|y| {
            samples
                .axis_iter(Axis(0))
                .map(|s| {
                    s.iter()
                        .zip(y.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}
