use std::path::{Path, PathBuf};

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use super::report::{summarize, MaskRecord, RunReport, SeedResult};
use super::{mean_std, thread_pool, ExperimentConfig, FmTimes};
use crate::conformal::{calibrate, coverage_of_scores, CalibrationResult, Threshold};
use crate::data::{split, volume_rescale, Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::genmodels::{model_paths, train_diffusion_with, train_fm, DiffusionModel, FlowModel};
use crate::nn::Matrix;
use crate::regions::{estimate_volume_batched, region_mask_batched, BoundingBox};
use crate::rng::mix_seed;
use crate::scoring::{
    build_bank, diffusion_steps, fm_grid, fm_random_times, CRNBank, PcpScore, PointPredictor,
    ScoreFunction, ScoreKind, TraceScore,
};

pub(crate) const SALT_DIFFUSION: u64 = 11;
pub(crate) const SALT_FLOW: u64 = 12;
pub(crate) const SALT_REGRESSOR: u64 = 13;
pub(crate) const SALT_BANK: u64 = 21;
pub(crate) const SALT_PCP: u64 = 31;

const CHUNK: usize = 512;

/// The full dataset of one seed and its three parts.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub data: Dataset,
    pub split: SplitAssignment,
    pub train: Dataset,
    pub cal: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let data = cfg.dataset.load(seed)?;
    let split = split(data.len(), cfg.fractions, seed)?;
    Ok(SeedData {
        seed,
        train: data.subset(&split.train),
        cal: data.subset(&split.calibration),
        test: data.subset(&split.test),
        data,
        split,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SeedModels {
    pub diffusion: Option<DiffusionModel>,
    pub flow: Option<FlowModel>,
    pub regressor: Option<PointPredictor>,
}

impl SeedModels {
    /// Save each trained model as `dir/{diffusion,flow,regressor}` (checkpoint plus sidecar).
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        if let Some(m) = &self.diffusion {
            let (a, b) = m.save(&dir.join("diffusion"))?;
            paths.extend([a, b]);
        }
        if let Some(m) = &self.flow {
            let (a, b) = m.save(&dir.join("flow"))?;
            paths.extend([a, b]);
        }
        if let Some(m) = &self.regressor {
            let (a, b) = m.save(&dir.join("regressor"))?;
            paths.extend([a, b]);
        }
        Ok(paths)
    }

    /// Load whichever models exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let present = |name: &str| model_paths(&dir.join(name)).1.exists();
        Ok(SeedModels {
            diffusion: present("diffusion")
                .then(|| DiffusionModel::load(&dir.join("diffusion")))
                .transpose()?,
            flow: present("flow")
                .then(|| FlowModel::load(&dir.join("flow")))
                .transpose()?,
            regressor: present("regressor")
                .then(|| PointPredictor::load(&dir.join("regressor")))
                .transpose()?,
        })
    }
}

/// Train only what `methods` need, plus the point predictor when `regressor` is set.
pub fn train_models(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    methods: &[ScoreKind],
    regressor: bool,
) -> Result<SeedModels> {
    let (q, p) = (train.y_dim(), train.x_dim());
    let mut models = SeedModels::default();
    if methods.iter().any(|m| m.uses_diffusion()) {
        let tc = crate::genmodels::TrainConfig {
            seed: mix_seed(seed, SALT_DIFFUSION),
            ..cfg.train
        };
        models.diffusion = Some(train_diffusion_with(
            train,
            &tc,
            cfg.model.architecture(q, p)?,
            &cfg.schedule,
        )?);
    }
    if methods.contains(&ScoreKind::TraceFm) {
        let tc = crate::genmodels::TrainConfig {
            seed: mix_seed(seed, SALT_FLOW),
            ..cfg.train
        };
        models.flow = Some(train_fm(train, &tc, cfg.model.architecture(q, p)?)?);
    }
    if regressor || methods.iter().any(|m| m.uses_point_predictor()) {
        let tc = crate::genmodels::TrainConfig {
            seed: mix_seed(seed, SALT_REGRESSOR),
            ..cfg.regressor_train
        };
        models.regressor = Some(PointPredictor::fit(train, &tc, cfg.regressor_model)?);
    }
    Ok(models)
}

/// Both TRACE banks of a seed; they share one seed and differ only in their time sets.
#[derive(Debug, Clone)]
pub struct SeedBanks {
    pub diffusion: CRNBank,
    pub flow: CRNBank,
}

impl SeedBanks {
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = vec![dir.join("bank_diffusion.json"), dir.join("bank_flow.json")];
        self.diffusion.save(&paths[0])?;
        self.flow.save(&paths[1])?;
        Ok(paths)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(SeedBanks {
            diffusion: CRNBank::load(&dir.join("bank_diffusion.json"))?,
            flow: CRNBank::load(&dir.join("bank_flow.json"))?,
        })
    }
}

pub fn build_banks(cfg: &ExperimentConfig, seed: u64, dim: usize) -> Result<SeedBanks> {
    let bank_seed = mix_seed(seed, SALT_BANK);
    let steps = diffusion_steps(cfg.time_points, cfg.schedule.steps)?;
    Ok(SeedBanks {
        diffusion: build_bank(bank_seed, &steps, cfg.repeats, dim)?,
        flow: build_bank(
            bank_seed,
            &flow_times(cfg.fm_times, cfg.time_points, bank_seed)?,
            cfg.repeats,
            dim,
        )?,
    })
}

pub(crate) fn flow_times(kind: FmTimes, n: usize, bank_seed: u64) -> Result<Vec<f64>> {
    match kind {
        FmTimes::Grid => fm_grid(n),
        FmTimes::Random => fm_random_times(n, bank_seed),
    }
}

fn missing(kind: ScoreKind) -> Error {
    Error::invalid(format!("no trained model available for {kind}"))
}

pub fn score_function<'a>(
    kind: ScoreKind,
    models: &'a SeedModels,
    banks: &'a SeedBanks,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ScoreFunction<'a>> {
    let diffusion = || models.diffusion.as_ref().ok_or_else(|| missing(kind));
    let regressor = || models.regressor.as_ref().ok_or_else(|| missing(kind));
    Ok(match kind {
        ScoreKind::TraceDiff => {
            ScoreFunction::Trace(kind, TraceScore::diffusion(diffusion()?, &banks.diffusion)?)
        }
        ScoreKind::VlbWeighted => {
            ScoreFunction::Trace(kind, TraceScore::vlb(diffusion()?, &banks.diffusion)?)
        }
        ScoreKind::TraceFm => {
            let flow = models.flow.as_ref().ok_or_else(|| missing(kind))?;
            ScoreFunction::Trace(kind, TraceScore::flow(flow, &banks.flow)?)
        }
        ScoreKind::Ellipsoid => ScoreFunction::Ellipsoid(regressor()?),
        ScoreKind::Rectangle => ScoreFunction::Rectangle(regressor()?),
        ScoreKind::Pcp => ScoreFunction::Pcp(PcpScore {
            model: diffusion()?,
            k: cfg.pcp.k,
            sampler_steps: cfg.pcp.sampler_steps,
            seed: mix_seed(seed, SALT_PCP),
        }),
    })
}

/// Scores of the pairs `(xs[i], ys[i])`, in chunks.
pub fn paired_scores(
    f: &ScoreFunction,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.nrows());
    let mut start = 0;
    while start < xs.nrows() {
        let end = (start + CHUNK).min(xs.nrows());
        let rows = ndarray::s![start..end, ..];
        out.extend(f.scores_paired(xs.slice(rows), ys.slice(rows))?);
        start = end;
    }
    Ok(out)
}

/// Local boxes `y_hat(x) ± h` for the first `count` test inputs, with `h_j` the largest
/// absolute calibration residual in coordinate `j` times `box_scale`.
pub(crate) fn local_boxes(
    regressor: &PointPredictor,
    cal: &Dataset,
    test_x: ArrayView2<f64>,
    box_scale: f64,
) -> Result<Vec<BoundingBox>> {
    let resid = &cal.y - &regressor.predict_batch(cal.x.view())?;
    let half: Vec<f64> = resid
        .axis_iter(Axis(1))
        .map(|c| box_scale * c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    if half.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::numeric(
            "degenerate calibration residuals for the volume box",
        ));
    }
    let centres = regressor.predict_batch(test_x)?;
    centres
        .axis_iter(Axis(0))
        .map(|c| {
            BoundingBox::new(
                c.iter().zip(&half).map(|(c, h)| c - h).collect(),
                c.iter().zip(&half).map(|(c, h)| c + h).collect(),
            )
        })
        .collect()
}

/// Region volume in original units at each test input, parallel over inputs.
pub(crate) fn region_volumes(
    f: &ScoreFunction,
    threshold: Threshold,
    test_x: ArrayView2<f64>,
    boxes: &[BoundingBox],
    n_points: usize,
    y_std: &[f64],
) -> Result<Vec<f64>> {
    let dim = y_std.len();
    (0..boxes.len())
        .into_par_iter()
        .map(|i| {
            let x = test_x.row(i).to_vec();
            let est = estimate_volume_batched(
                |pts| {
                    let ys = ArrayView2::from_shape((pts.len() / dim, dim), pts)
                        .expect("flat row-major points");
                    f.within(&x, ys, threshold)
                },
                &boxes[i],
                n_points,
                None,
            )?;
            Ok(volume_rescale(&est, y_std))
        })
        .collect()
}

pub(crate) struct MethodOutcome {
    pub calibration: CalibrationResult,
    pub coverage: f64,
    pub volume: Option<f64>,
    pub masks: Vec<MaskRecord>,
}

/// Calibrate `f`, measure test coverage and, when `boxes` is non-empty, the mean region volume.
pub(crate) fn evaluate_method(
    f: &ScoreFunction,
    seed: u64,
    data: &SeedData,
    alpha: f64,
    boxes: &[BoundingBox],
    cfg: &ExperimentConfig,
) -> Result<MethodOutcome> {
    let (_, calibration) = calibrate_method(f, data, alpha)?;
    let test_scores = paired_scores(f, data.test.x.view(), data.test.y.view())?;
    let coverage = coverage_of_scores(&test_scores, calibration.threshold)?;
    let test_x = data.test.x.view();
    let volume = if boxes.is_empty() {
        None
    } else {
        let n_points = cfg.volume.points_for(data.test.y_dim());
        let vols = region_volumes(
            f,
            calibration.threshold,
            test_x,
            boxes,
            n_points,
            &data.data.y_std,
        )?;
        Some(mean_std(&vols).0)
    };
    let mut masks = Vec::new();
    if data.test.y_dim() == 2 {
        for (i, bbox) in boxes.iter().enumerate().take(cfg.masks) {
            let x = test_x.row(i).to_vec();
            let mask = region_mask_batched(
                |pts| {
                    let ys = ArrayView2::from_shape((pts.len() / 2, 2), pts)
                        .expect("flat row-major points");
                    f.within(&x, ys, calibration.threshold)
                },
                bbox,
                cfg.mask_resolution,
            )?;
            masks.push(MaskRecord {
                seed,
                method: f.kind(),
                point_id: data.split.test[i],
                mask,
            });
        }
    }
    Ok(MethodOutcome {
        calibration,
        coverage,
        volume,
        masks,
    })
}

/// Every configured method on one seed: data, split, models, banks, calibration, coverage, volume.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<SeedResult>, Vec<MaskRecord>)> {
    let data = prepare_data(cfg, seed)?;
    let models = train_models(cfg, seed, &data.train, &cfg.methods, cfg.needs_volume())?;
    let banks = build_banks(cfg, seed, data.train.y_dim())?;
    evaluate_seed(cfg, &data, &models, &banks)
}

/// Calibrate and evaluate every configured method with already trained models.
pub fn evaluate_seed(
    cfg: &ExperimentConfig,
    data: &SeedData,
    models: &SeedModels,
    banks: &SeedBanks,
) -> Result<(Vec<SeedResult>, Vec<MaskRecord>)> {
    let seed = data.seed;
    let boxes = match (&models.regressor, cfg.needs_volume()) {
        (Some(reg), true) => {
            let count = cfg.volume.test_points.min(data.test.len());
            let test_x = data.test.x.slice(ndarray::s![..count, ..]);
            local_boxes(reg, &data.cal, test_x, cfg.volume.box_scale)?
        }
        (None, true) => return Err(Error::invalid("volume needs the point predictor")),
        _ => Vec::new(),
    };
    let mut results = Vec::with_capacity(cfg.methods.len());
    let mut masks = Vec::new();
    for &kind in &cfg.methods {
        let f = score_function(kind, models, banks, cfg, seed)?;
        let out = evaluate_method(&f, seed, data, cfg.alpha, &boxes, cfg)?;
        log::info!(
            "seed {seed} {kind}: coverage {:.4}, volume {:?}",
            out.coverage,
            out.volume
        );
        results.push(SeedResult {
            seed,
            method: kind,
            coverage: 100.0 * out.coverage,
            volume: out.volume,
            threshold: out.calibration.threshold,
            n_cal: data.cal.len(),
            n_test: data.test.len(),
        });
        masks.extend(out.masks);
    }
    Ok((results, masks))
}

/// Calibration scores and the calibration result of one method.
pub fn calibrate_method(
    f: &ScoreFunction,
    data: &SeedData,
    alpha: f64,
) -> Result<(Vec<f64>, CalibrationResult)> {
    let scores = paired_scores(f, data.cal.x.view(), data.cal.y.view())?;
    let cal = calibrate(&scores, alpha)?.with_provenance(f.kind().name(), f.bank_hash());
    Ok((scores, cal))
}

/// Run every seed (in parallel, capped by `TRACE_THREADS`) and aggregate per method.
/// Seeds failing with a numeric error are excluded and listed in the report.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let pool = thread_pool()?;
    let outcomes: Vec<Result<(Vec<SeedResult>, Vec<MaskRecord>)>> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect());
    let mut raw = Vec::new();
    let mut masks = Vec::new();
    let mut failed = Vec::new();
    for (&seed, outcome) in cfg.seeds.iter().zip(outcomes) {
        match outcome {
            Ok((r, m)) => {
                raw.extend(r);
                masks.extend(m);
            }
            Err(e) if e.is_numeric() => {
                log::warn!("seed {seed} failed and is excluded: {e}");
                failed.push(seed);
            }
            Err(e) => return Err(e),
        }
    }
    if failed.len() == cfg.seeds.len() {
        return Err(Error::numeric(format!("all {} seeds failed", failed.len())));
    }
    Ok(assemble_report(cfg, raw, masks, failed))
}

/// Aggregate per-seed results into a report.
pub fn assemble_report(
    cfg: &ExperimentConfig,
    raw: Vec<SeedResult>,
    masks: Vec<MaskRecord>,
    failed: Vec<u64>,
) -> RunReport {
    RunReport {
        dataset: cfg.dataset.name(),
        alpha: cfg.alpha,
        methods: cfg.methods.clone(),
        seeds: cfg.seeds.clone(),
        failed_seeds: failed,
        summary: summarize(&cfg.methods, &raw),
        raw,
        masks,
    }
}

/// Calibration inputs and targets restricted to the first `count` rows (all when 0).
pub(crate) fn head_rows(ds: &Dataset, count: usize) -> (Matrix, Matrix) {
    let n = if count == 0 {
        ds.len()
    } else {
        count.min(ds.len())
    };
    (
        ds.x.slice(ndarray::s![..n, ..]).to_owned(),
        ds.y.slice(ndarray::s![..n, ..]).to_owned(),
    )
}
