use serde::{Deserialize, Serialize};

use super::benchmark::{
    flow_times, head_rows, local_boxes, paired_scores, prepare_data, region_volumes, train_models,
};
use super::{mean_std, ExperimentConfig};
use crate::conformal::calibrate;
use crate::error::{Error, Result};
use crate::genmodels::NoisePredictor;
use crate::rng::mix_seed;
use crate::scoring::{build_bank, diffusion_steps, CRNBank, ScoreFunction, ScoreKind, TraceScore};

const SALT_ABLATION: u64 = 41;

/// `(|T|, R)` pairs for B = 8, 16, 32, 64, 120, 256 at eight time points.
pub const DEFAULT_BUDGET_GRID: [(usize, usize); 6] =
    [(8, 1), (8, 2), (8, 4), (8, 8), (8, 15), (8, 32)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub time_points: usize,
    pub repeats: usize,
    pub budget: usize,
    /// Across-bank standard deviation of each calibration score, averaged over points.
    pub score_std: f64,
    pub threshold_mean: f64,
    pub threshold_std: f64,
    /// Mean region volume over the measured banks, in original units.
    pub volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub score: ScoreKind,
    pub seed: u64,
    pub banks: usize,
    pub n_cal: usize,
    pub rows: Vec<AblationRow>,
    /// Least-squares slope of log score std against log B.
    pub slope: f64,
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope needs at least two paired values"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::numeric("log-log slope needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope needs at least two distinct budgets"));
    }
    Ok(sxy / sxx)
}

/// The TRACE score of `kind` over `bank`.
pub(crate) fn trace_over<'a>(
    kind: ScoreKind,
    models: &'a super::SeedModels,
    bank: &'a CRNBank,
) -> Result<ScoreFunction<'a>> {
    let missing = || Error::invalid(format!("no trained model available for {kind}"));
    let score = match kind {
        ScoreKind::TraceFm => TraceScore::flow(models.flow.as_ref().ok_or_else(missing)?, bank)?,
        ScoreKind::TraceDiff => {
            TraceScore::diffusion(models.diffusion.as_ref().ok_or_else(missing)?, bank)?
        }
        ScoreKind::VlbWeighted => {
            TraceScore::vlb(models.diffusion.as_ref().ok_or_else(missing)?, bank)?
        }
        other => return Err(Error::invalid(format!("{other} has no Monte Carlo budget"))),
    };
    Ok(ScoreFunction::Trace(kind, score))
}

/// Time set of `n` points for a TRACE variant.
pub(crate) fn time_set(
    cfg: &ExperimentConfig,
    kind: ScoreKind,
    n: usize,
    bank_seed: u64,
) -> Result<Vec<f64>> {
    if kind == ScoreKind::TraceFm {
        flow_times(cfg.fm_times, n, bank_seed)
    } else {
        diffusion_steps(n, cfg.schedule.steps)
    }
}

/// Monte Carlo budget sweep on one trained model (first configured seed): for each `(|T|, R)`,
/// draw `cfg.ablation.banks` fresh banks and score the calibration set with each.
pub fn ablate_budget(cfg: &ExperimentConfig, grid: &[(usize, usize)]) -> Result<AblationReport> {
    cfg.validate()?;
    if grid.is_empty() || grid.iter().any(|&(t, r)| t == 0 || r == 0) {
        return Err(Error::invalid("budget grid needs positive (|T|, R) pairs"));
    }
    let budgets: Vec<usize> = grid.iter().map(|&(t, r)| t * r).collect();
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("budgets must be strictly increasing"));
    }
    let ab = cfg.ablation;
    let seed = cfg.seeds[0];
    let data = prepare_data(cfg, seed)?;
    let measure = ab.volume_banks > 0 && cfg.needs_volume();
    let models = train_models(cfg, seed, &data.train, &[ab.score], measure)?;
    let (cx, cy) = head_rows(&data.cal, ab.cal_points);
    let count = cfg.volume.test_points.min(data.test.len());
    let test_x = data.test.x.slice(ndarray::s![..count, ..]);
    let boxes = match (&models.regressor, measure) {
        (Some(reg), true) => local_boxes(reg, &data.cal, test_x, cfg.volume.box_scale)?,
        _ => Vec::new(),
    };
    let dim = data.train.y_dim();
    let pool = super::thread_pool()?;
    let mut rows = Vec::with_capacity(grid.len());
    for (&(t, r), &budget) in grid.iter().zip(&budgets) {
        let per_bank: Vec<Result<(Vec<f64>, f64, Option<f64>)>> = pool.install(|| {
            use rayon::prelude::*;
            (0..ab.banks)
                .into_par_iter()
                .map(|b| {
                    let bank_seed =
                        mix_seed(mix_seed(seed, SALT_ABLATION + budget as u64), b as u64);
                    let bank =
                        build_bank(bank_seed, &time_set(cfg, ab.score, t, bank_seed)?, r, dim)?;
                    let f = trace_over(ab.score, &models, &bank)?;
                    let scores = paired_scores(&f, cx.view(), cy.view())?;
                    let threshold = calibrate(&scores, cfg.alpha)?.threshold;
                    let volume = if b < ab.volume_banks && !boxes.is_empty() {
                        let n_points = cfg.volume.points_for(dim);
                        let v = region_volumes(
                            &f,
                            threshold,
                            test_x,
                            &boxes,
                            n_points,
                            &data.data.y_std,
                        )?;
                        Some(mean_std(&v).0)
                    } else {
                        None
                    };
                    Ok((scores, threshold.value(), volume))
                })
                .collect()
        });
        let per_bank = per_bank.into_iter().collect::<Result<Vec<_>>>()?;
        let n = cx.nrows();
        let point_std: Vec<f64> = (0..n)
            .map(|i| mean_std(&per_bank.iter().map(|(s, _, _)| s[i]).collect::<Vec<_>>()).1)
            .collect();
        let (threshold_mean, threshold_std) =
            mean_std(&per_bank.iter().map(|(_, q, _)| *q).collect::<Vec<_>>());
        let vols: Vec<f64> = per_bank.iter().filter_map(|(_, _, v)| *v).collect();
        rows.push(AblationRow {
            time_points: t,
            repeats: r,
            budget,
            score_std: mean_std(&point_std).0,
            threshold_mean,
            threshold_std,
            volume: if vols.is_empty() {
                None
            } else {
                Some(mean_std(&vols).0)
            },
        });
        log::info!(
            "ablation B={budget}: score std {:.5}",
            rows.last().expect("pushed").score_std
        );
    }
    let slope = log_log_slope(
        &rows.iter().map(|r| r.budget as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.score_std).collect::<Vec<_>>(),
    )?;
    Ok(AblationReport {
        dataset: cfg.dataset.name(),
        score: ab.score,
        seed,
        banks: ab.banks,
        n_cal: cx.nrows(),
        rows,
        slope,
    })
}

/// Weights of a TRACE variant per time point (uniform except for the VLB variant).
pub(crate) fn time_weights(
    kind: ScoreKind,
    model: Option<&dyn NoisePredictor>,
    bank: &CRNBank,
) -> Result<Vec<f64>> {
    match (kind, model) {
        (ScoreKind::VlbWeighted, Some(m)) => {
            crate::scoring::vlb_weights(m.schedule(), &bank.steps(m.schedule().steps())?)
        }
        _ => Ok(vec![1.0; bank.time_set.len()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{AblationConfig, DatasetSpec, VolumeConfig};
    use crate::genmodels::{ModelSize, TrainConfig};

    #[test]
    fn slope_of_power_law() {
        let x = [8.0, 16.0, 32.0, 64.0];
        let y: Vec<f64> = x.iter().map(|b: &f64| 3.0 * b.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&[1.0], &[1.0]).is_err());
        assert!(log_log_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn small_sweep() {
        let train = TrainConfig {
            epochs: 2,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                name: "pinwheel_L".into(),
                n: 200,
            },
            seeds: vec![4],
            train,
            regressor_train: train,
            model: ModelSize {
                hidden: 8,
                blocks: 1,
            },
            regressor_model: ModelSize {
                hidden: 8,
                blocks: 1,
            },
            volume: VolumeConfig {
                points: 128,
                test_points: 2,
                box_scale: 1.25,
            },
            ablation: AblationConfig {
                banks: 6,
                volume_banks: 2,
                ..AblationConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let grid = [(4, 1), (4, 4), (4, 16)];
        let rep = ablate_budget(&cfg, &grid).unwrap();
        assert_eq!(
            rep.rows.iter().map(|r| r.budget).collect::<Vec<_>>(),
            vec![4, 16, 64]
        );
        assert!(rep.rows[0].score_std > rep.rows[2].score_std);
        assert!(rep.rows.iter().all(|r| r.volume.unwrap() > 0.0));
        assert_eq!(rep, ablate_budget(&cfg, &grid).unwrap());
        assert!(ablate_budget(&cfg, &[(4, 2), (2, 4)]).is_err());
    }
}
