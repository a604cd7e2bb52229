use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ablation::{time_set, time_weights, trace_over};
use super::benchmark::{head_rows, prepare_data, train_models};
use super::ExperimentConfig;
use crate::conformal::{calibrate, Threshold};
use crate::error::{Error, Result};
use crate::genmodels::NoisePredictor;
use crate::nn::Matrix;
use crate::rng::mix_seed;
use crate::scoring::{build_bank, CRNBank, ScoreFunction, ScoreKind};

const SALT_THRESHOLD: u64 = 51;

/// Budgets B = 8 ... 512.
pub const DEFAULT_THRESHOLD_GRID: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];
pub const DEFAULT_M_GRID: [usize; 6] = [2, 4, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub budget: usize,
    pub repeats: usize,
    /// Mean of `|q_B - q_ref|` over banks.
    pub mean_abs_error: f64,
    /// `2 sqrt(n_cal C / B)`.
    pub bound: f64,
    pub c_hat: f64,
    pub n_cal: usize,
    pub holds: bool,
}

fn threshold_value(scores: &[f64], alpha: f64) -> Result<f64> {
    match calibrate(scores, alpha)?.threshold {
        Threshold::Finite(q) => Ok(q),
        Threshold::Unbounded => Err(Error::invalid(
            "calibration set too small for a finite threshold",
        )),
    }
}

fn row_means(m: &Matrix) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|r| r.sum() / r.len() as f64)
        .collect()
}

/// Threshold error against a reference bank of `reference_multiple × max(grid)` draws.
///
/// `losses(bank)` returns the per-entry losses (already weighted) as an `n_cal × B` matrix with
/// columns ordered time-major then repeat, so the score is the row mean. `Ĉ` is the largest
/// per-time sample variance over points, estimated on the reference bank.
#[allow(clippy::too_many_arguments)]
pub fn threshold_stability<F>(
    losses: F,
    times: &[f64],
    dim: usize,
    grid: &[usize],
    banks: usize,
    reference_multiple: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ThresholdRow>>
where
    F: Fn(&CRNBank) -> Result<Matrix> + Sync,
{
    let n_t = times.len();
    if grid.is_empty() || grid.iter().any(|&b| b == 0 || b % n_t != 0) {
        return Err(Error::invalid(format!(
            "every budget must be a positive multiple of |T| = {n_t}"
        )));
    }
    if banks < 1 || reference_multiple < 1 {
        return Err(Error::invalid(
            "need at least one bank and a positive reference multiple",
        ));
    }
    let max_b = *grid.iter().max().expect("non-empty");
    let ref_repeats = reference_multiple * max_b / n_t;
    if ref_repeats < 2 {
        return Err(Error::invalid(
            "reference bank needs at least two repeats per time",
        ));
    }
    let reference = build_bank(mix_seed(seed, SALT_THRESHOLD), times, ref_repeats, dim)?;
    let ref_losses = losses(&reference)?;
    let n_cal = ref_losses.nrows();
    let q_ref = threshold_value(&row_means(&ref_losses), alpha)?;
    let mut c_hat = 0.0f64;
    for row in ref_losses.rows() {
        for k in 0..n_t {
            let block = row.slice(ndarray::s![k * ref_repeats..(k + 1) * ref_repeats]);
            let mean = block.sum() / ref_repeats as f64;
            let var =
                block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ref_repeats - 1) as f64;
            c_hat = c_hat.max(var);
        }
    }
    drop(ref_losses);
    let pool = super::thread_pool()?;
    grid.iter()
        .map(|&b| {
            let r = b / n_t;
            let errs: Vec<Result<f64>> = pool.install(|| {
                (0..banks)
                    .into_par_iter()
                    .map(|i| {
                        let bank_seed =
                            mix_seed(mix_seed(seed, SALT_THRESHOLD + b as u64), i as u64);
                        let bank = build_bank(bank_seed, times, r, dim)?;
                        Ok((threshold_value(&row_means(&losses(&bank)?), alpha)? - q_ref).abs())
                    })
                    .collect()
            });
            let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
            let mean_abs_error = errs.iter().sum::<f64>() / banks as f64;
            let bound = 2.0 * (n_cal as f64 * c_hat / b as f64).sqrt();
            log::info!("threshold B={b}: mean |q - q_ref| {mean_abs_error:.3e}, bound {bound:.3e}");
            Ok(ThresholdRow {
                budget: b,
                repeats: r,
                mean_abs_error,
                bound,
                c_hat,
                n_cal,
                holds: mean_abs_error <= bound,
            })
        })
        .collect()
}

/// [`threshold_stability`] for the configured TRACE variant, trained on the first seed.
pub fn threshold_stability_check(
    cfg: &ExperimentConfig,
    grid: &[usize],
) -> Result<Vec<ThresholdRow>> {
    cfg.validate()?;
    let ab = cfg.ablation;
    let seed = cfg.seeds[0];
    let data = prepare_data(cfg, seed)?;
    let models = train_models(cfg, seed, &data.train, &[ab.score], false)?;
    let (cx, cy) = head_rows(&data.cal, ab.cal_points);
    let bank_seed = mix_seed(seed, SALT_THRESHOLD);
    let times = time_set(cfg, ab.score, ab.time_points, bank_seed)?;
    let noise: Option<&dyn NoisePredictor> =
        models.diffusion.as_ref().map(|m| m as &dyn NoisePredictor);
    let losses = |bank: &CRNBank| -> Result<Matrix> {
        let ScoreFunction::Trace(_, score) = trace_over(ab.score, &models, bank)? else {
            unreachable!("trace_over builds TRACE scores")
        };
        let mut m = score.loss_matrix_paired(cx.view(), cy.view())?;
        let w = time_weights(
            ab.score,
            noise.filter(|_| ab.score == ScoreKind::VlbWeighted),
            bank,
        )?;
        for (k, wk) in w.iter().enumerate() {
            m.slice_mut(ndarray::s![.., k * bank.repeats..(k + 1) * bank.repeats])
                .mapv_inplace(|v| v * wk);
        }
        Ok(m)
    };
    threshold_stability(
        losses,
        &times,
        data.train.y_dim(),
        grid,
        ab.banks,
        ab.reference_multiple,
        cfg.alpha,
        seed,
    )
}

/// A test integrand on [0, 1] with its exact integral and Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuSpec {
    /// `sin(2 pi t)`.
    Sine,
    /// `t`.
    Linear,
    Constant(f64),
}

impl MuSpec {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            MuSpec::Sine => (2.0 * PI * t).sin(),
            MuSpec::Linear => t,
            MuSpec::Constant(c) => c,
        }
    }

    pub fn integral(self) -> f64 {
        match self {
            MuSpec::Sine => 0.0,
            MuSpec::Linear => 0.5,
            MuSpec::Constant(c) => c,
        }
    }

    pub fn lipschitz(self) -> f64 {
        match self {
            MuSpec::Sine => 2.0 * PI,
            MuSpec::Linear => 1.0,
            MuSpec::Constant(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationRow {
    pub m: usize,
    /// `(1/m) Σ mu(j/m)`, j = 1..m.
    pub estimate: f64,
    pub error: f64,
    /// `L / (2m)`.
    pub bound: f64,
    pub holds: bool,
}

/// Right-endpoint rectangle rule against the exact integral, with its Lipschitz bound.
pub fn discretization_check(mu: MuSpec, m_grid: &[usize]) -> Result<Vec<DiscretizationRow>> {
    if m_grid.contains(&0) {
        return Err(Error::invalid("grid sizes must be positive"));
    }
    Ok(m_grid
        .iter()
        .map(|&m| {
            let estimate = (1..=m).map(|j| mu.eval(j as f64 / m as f64)).sum::<f64>() / m as f64;
            let error = (estimate - mu.integral()).abs();
            let bound = mu.lipschitz() / (2.0 * m as f64);
            DiscretizationRow {
                m,
                estimate,
                error,
                bound,
                holds: error <= bound + 4.0 * f64::EPSILON,
            }
        })
        .collect())
}
