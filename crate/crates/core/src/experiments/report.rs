use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mean_std;
use crate::conformal::Threshold;
use crate::error::{Error, Result};
use crate::regions::RegionMask;
use crate::scoring::ScoreKind;

/// One method on one seed. Coverage is in percent; volume is in original target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub method: ScoreKind,
    pub coverage: f64,
    pub volume: Option<f64>,
    pub threshold: Threshold,
    pub n_cal: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub seed: u64,
    pub method: ScoreKind,
    /// Row of the full dataset.
    pub point_id: usize,
    pub mask: RegionMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Raw,
    Summary,
}

/// A line of the emitted table; raw rows carry a seed, summary rows a spread over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub method: ScoreKind,
    pub seed: Option<u64>,
    pub n_seeds: usize,
    pub coverage: f64,
    pub coverage_std: Option<f64>,
    pub volume: Option<f64>,
    pub volume_std: Option<f64>,
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dataset: String,
    pub alpha: f64,
    pub methods: Vec<ScoreKind>,
    /// Configured seeds, including failed ones.
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub raw: Vec<SeedResult>,
    pub summary: Vec<ReportRow>,
    pub masks: Vec<MaskRecord>,
}

impl RunReport {
    pub fn summary_for(&self, method: ScoreKind) -> Option<&ReportRow> {
        self.summary.iter().find(|r| r.method == method)
    }

    pub fn raw_for(&self, method: ScoreKind) -> impl Iterator<Item = &SeedResult> {
        self.raw.iter().filter(move |r| r.method == method)
    }

    /// Raw rows followed by summary rows.
    pub fn rows(&self) -> Vec<ReportRow> {
        self.raw
            .iter()
            .map(|r| ReportRow {
                kind: RowKind::Raw,
                method: r.method,
                seed: Some(r.seed),
                n_seeds: 1,
                coverage: r.coverage,
                coverage_std: None,
                volume: r.volume,
                volume_std: None,
                threshold: Some(r.threshold),
            })
            .chain(self.summary.iter().cloned())
            .collect()
    }

    /// `dataset_methods_seedcount`, methods joined by `+`.
    pub fn file_stem(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        format!(
            "{}_{}_{}",
            self.dataset,
            methods.join("+"),
            self.seeds.len()
        )
    }
}

/// Mean and sample standard deviation over seeds for each method, in `methods` order.
pub fn summarize(methods: &[ScoreKind], raw: &[SeedResult]) -> Vec<ReportRow> {
    methods
        .iter()
        .filter_map(|&m| {
            let rows: Vec<&SeedResult> = raw.iter().filter(|r| r.method == m).collect();
            if rows.is_empty() {
                return None;
            }
            let (coverage, coverage_std) =
                mean_std(&rows.iter().map(|r| r.coverage).collect::<Vec<_>>());
            let vols: Option<Vec<f64>> = rows.iter().map(|r| r.volume).collect();
            let (volume, volume_std) = match vols {
                Some(v) => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            Some(ReportRow {
                kind: RowKind::Summary,
                method: m,
                seed: None,
                n_seeds: rows.len(),
                coverage,
                coverage_std: Some(coverage_std),
                volume,
                volume_std,
                threshold: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ReportDocument {
    pub dataset: String,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

/// Write the report table and any region masks into `out_dir`; returns the written paths.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = report.file_stem();
    let mut paths = Vec::new();
    let rows = report.rows();
    match format {
        ReportFormat::Csv => {
            let path = out_dir.join(format!("{stem}.csv"));
            let err = |e: csv::Error| Error::Schema(format!("{}: {e}", path.display()));
            let mut w = csv::Writer::from_path(&path).map_err(err)?;
            for row in &rows {
                w.serialize(row).map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        ReportFormat::Json => {
            let path = out_dir.join(format!("{stem}.json"));
            let doc = ReportDocument {
                dataset: report.dataset.clone(),
                alpha: report.alpha,
                seeds: report.seeds.clone(),
                failed_seeds: report.failed_seeds.clone(),
                rows,
            };
            let text =
                serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
    }
    for m in &report.masks {
        let base = format!("{stem}_mask_seed{}_{}_{}", m.seed, m.method, m.point_id);
        for (ext, body) in [("csv", m.mask.to_csv()), ("pgm", m.mask.to_pgm())] {
            let path = out_dir.join(format!("{base}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Rows of an emitted CSV report.
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                location: format!("{}:{}", path.display(), i + 2),
                message: e.to_string(),
            })
        })
        .collect()
}
