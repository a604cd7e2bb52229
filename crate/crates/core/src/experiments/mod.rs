//! Experiment harness: benchmark runs, budget ablation, theory checks and report files.

mod ablation;
mod benchmark;
mod report;
mod theory;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablate_budget, log_log_slope, AblationReport, AblationRow, DEFAULT_BUDGET_GRID,
};
pub use benchmark::{
    assemble_report, build_banks, calibrate_method, evaluate_seed, paired_scores, prepare_data,
    run_benchmark, run_seed, score_function, train_models, SeedBanks, SeedData, SeedModels,
};
pub use report::{
    emit_report, read_report_csv, summarize, MaskRecord, ReportFormat, ReportRow, RowKind,
    RunReport, SeedResult,
};
pub use theory::{
    discretization_check, threshold_stability, threshold_stability_check, DiscretizationRow,
    MuSpec, ThresholdRow, DEFAULT_M_GRID, DEFAULT_THRESHOLD_GRID,
};

use crate::data::{gen_synthetic, load_csv, Dataset, SyntheticConfig, DEFAULT_FRACTIONS};
use crate::error::{Error, Result};
use crate::genmodels::{ModelSize, ScheduleSpec, TrainConfig};
use crate::scoring::ScoreKind;

/// Where the data of a run comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// One of `spiral_L`, `spiral_H`, `pinwheel_L`, `pinwheel_H`.
    Synthetic { name: String, n: usize },
    Csv {
        path: PathBuf,
        x_columns: Vec<String>,
        y_columns: Vec<String>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            name: "spiral_L".into(),
            n: 4000,
        }
    }
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Synthetic { name, .. } => name
                .parse::<SyntheticConfig>()
                .map(|c| c.name())
                .unwrap_or(name.clone()),
            DatasetSpec::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
        }
    }

    /// Generate (synthetic, seeded) or read (CSV, seed unused) the full dataset.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic { name, n } => {
                let cfg: SyntheticConfig = name.parse()?;
                gen_synthetic(&SyntheticConfig { n: *n, seed, ..cfg })
            }
            DatasetSpec::Csv {
                path,
                x_columns,
                y_columns,
            } => {
                let xs: Vec<&str> = x_columns.iter().map(String::as_str).collect();
                let ys: Vec<&str> = y_columns.iter().map(String::as_str).collect();
                load_csv(path, &xs, &ys)
            }
        }
    }
}

/// How flow-matching times are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FmTimes {
    /// `j / (n + 1)`, `j = 1..n`.
    #[default]
    Grid,
    /// Uniform draws fixed by the bank seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcpConfig {
    pub k: usize,
    pub sampler_steps: usize,
}

impl Default for PcpConfig {
    fn default() -> Self {
        PcpConfig {
            k: 50,
            sampler_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolumeConfig {
    /// Sobol points per test input; 0 picks 2^14 for up to two target dimensions and 2^16 above.
    pub points: usize,
    /// Test inputs whose regions are measured; 0 skips volume, and values above the test size use all of them.
    pub test_points: usize,
    /// Half-width of the local box around the point prediction, as a multiple of the largest
    /// calibration residual per coordinate.
    pub box_scale: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            points: 0,
            test_points: 50,
            box_scale: 1.25,
        }
    }
}

impl VolumeConfig {
    pub fn points_for(&self, dim: usize) -> usize {
        match self.points {
            0 if dim <= 2 => 1 << 14,
            0 => 1 << 16,
            n => n,
        }
    }
}

/// Budget ablation and threshold-check settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// The TRACE variant studied.
    pub score: ScoreKind,
    /// Time points, fixed while the repeat count varies.
    pub time_points: usize,
    /// Fresh banks per budget.
    pub banks: usize,
    /// Banks per budget whose regions are measured (0 skips volume).
    pub volume_banks: usize,
    /// Calibration points used (0 keeps all).
    pub cal_points: usize,
    /// Reference budget as a multiple of the largest grid budget.
    pub reference_multiple: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            score: ScoreKind::TraceFm,
            time_points: 8,
            banks: 50,
            volume_banks: 3,
            cal_points: 0,
            reference_multiple: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<ScoreKind>,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    /// `|T|`, the number of time points in a bank.
    pub time_points: usize,
    /// `R`, fresh draws per time point.
    pub repeats: usize,
    pub fm_times: FmTimes,
    pub train: TrainConfig,
    pub model: ModelSize,
    /// Point predictor used by the ellipsoid and rectangle baselines and for volume boxes.
    pub regressor_train: TrainConfig,
    pub regressor_model: ModelSize,
    pub schedule: ScheduleSpec,
    pub pcp: PcpConfig,
    pub volume: VolumeConfig,
    pub fractions: [f64; 3],
    /// Test points per seed and method whose region masks are written (2-D targets only).
    pub masks: usize,
    pub mask_resolution: usize,
    pub ablation: AblationConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            methods: ScoreKind::ALL.to_vec(),
            alpha: 0.1,
            seeds: (0..20).collect(),
            time_points: 15,
            repeats: 8,
            fm_times: FmTimes::Grid,
            train: TrainConfig {
                epochs: 300,
                batch_size: 64,
                ..TrainConfig::default()
            },
            model: ModelSize::default(),
            regressor_train: TrainConfig {
                epochs: 300,
                batch_size: 64,
                ..TrainConfig::default()
            },
            regressor_model: ModelSize::default(),
            schedule: ScheduleSpec::default(),
            pcp: PcpConfig::default(),
            volume: VolumeConfig::default(),
            fractions: DEFAULT_FRACTIONS,
            masks: 0,
            mask_resolution: 64,
            ablation: AblationConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Sample size, seed count and network size of the original protocol.
    pub fn full_scale(mut self) -> Self {
        if let DatasetSpec::Synthetic { n, .. } = &mut self.dataset {
            *n = 30_000;
        }
        self.seeds = (0..20).collect();
        self.train.epochs = 2000;
        self.regressor_train.epochs = 2000;
        self.model = ModelSize {
            hidden: 256,
            blocks: 8,
        };
        self.regressor_model = ModelSize {
            hidden: 256,
            blocks: 8,
        };
        self.volume.test_points = usize::MAX;
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::invalid("methods must not repeat"));
        }
        if self.time_points == 0 || self.repeats == 0 {
            return Err(Error::invalid(
                "bank budget needs at least one time point and one repeat",
            ));
        }
        if self.pcp.k == 0 || self.pcp.sampler_steps == 0 {
            return Err(Error::invalid(
                "pcp needs at least one sample and one sampler step",
            ));
        }
        if !(self.volume.box_scale > 0.0 && self.volume.box_scale.is_finite()) {
            return Err(Error::invalid("volume box_scale must be positive"));
        }
        if self.mask_resolution < 2 {
            return Err(Error::invalid("mask_resolution must be at least 2"));
        }
        let a = &self.ablation;
        if a.time_points == 0 || a.banks < 2 || a.reference_multiple == 0 {
            return Err(Error::invalid(
                "ablation needs time points, at least two banks and a reference multiple",
            ));
        }
        if !matches!(
            a.score,
            ScoreKind::TraceDiff | ScoreKind::TraceFm | ScoreKind::VlbWeighted
        ) {
            return Err(Error::invalid(format!(
                "ablation score must be a TRACE variant, got {}",
                a.score
            )));
        }
        if let DatasetSpec::Synthetic { name, n } = &self.dataset {
            name.parse::<SyntheticConfig>()?;
            if *n < 10 {
                return Err(Error::invalid("synthetic datasets need at least 10 rows"));
            }
        }
        self.train.validate()?;
        self.regressor_train.validate()?;
        self.schedule.build()?;
        crate::data::split(10, self.fractions, 0).map(|_| ())
    }

    pub(crate) fn needs_volume(&self) -> bool {
        self.volume.test_points > 0
    }
}

/// Worker pool sized by `TRACE_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("TRACE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "TRACE_THREADS must be a positive integer, got {v:?}"
                ))
            })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Sample mean and standard deviation (denominator n - 1; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
