//! Nonconformity scores: TRACE variants over a common-random-numbers bank and the baselines.

mod bank;
mod baselines;
mod trace;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use bank::{build_bank, diffusion_steps, fm_grid, fm_random_times, BankRecord, CRNBank};
pub use baselines::{ellipsoid_score, pcp_score, pcp_scores, rectangle_score, PointPredictor};
pub use trace::{vlb_weights, TraceScore};

use crate::conformal::{Nonconformity, Threshold};
use crate::error::{Error, Result};
use crate::genmodels::{ddpm_sample_paired, ddpm_sample_respaced, NoisePredictor};
use crate::nn::Matrix;
use crate::rng::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "trace-diff")]
    TraceDiff,
    #[serde(rename = "trace-fm")]
    TraceFm,
    #[serde(rename = "vlb-weighted")]
    VlbWeighted,
    #[serde(rename = "ellipsoid")]
    Ellipsoid,
    #[serde(rename = "rectangle")]
    Rectangle,
    #[serde(rename = "pcp")]
    Pcp,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 6] = [
        ScoreKind::TraceDiff,
        ScoreKind::TraceFm,
        ScoreKind::VlbWeighted,
        ScoreKind::Ellipsoid,
        ScoreKind::Rectangle,
        ScoreKind::Pcp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::TraceDiff => "trace-diff",
            ScoreKind::TraceFm => "trace-fm",
            ScoreKind::VlbWeighted => "vlb-weighted",
            ScoreKind::Ellipsoid => "ellipsoid",
            ScoreKind::Rectangle => "rectangle",
            ScoreKind::Pcp => "pcp",
        }
    }

    pub fn uses_diffusion(self) -> bool {
        matches!(
            self,
            ScoreKind::TraceDiff | ScoreKind::VlbWeighted | ScoreKind::Pcp
        )
    }

    pub fn uses_point_predictor(self) -> bool {
        matches!(self, ScoreKind::Ellipsoid | ScoreKind::Rectangle)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown score kind {s:?}")))
    }
}

/// PCP: distance to the nearest of `k` diffusion samples drawn once per input.
#[derive(Clone, Copy)]
pub struct PcpScore<'a> {
    pub model: &'a dyn NoisePredictor,
    pub k: usize,
    /// Sampler steps (respaced); the full schedule when equal to T.
    pub sampler_steps: usize,
    pub seed: u64,
}

impl PcpScore<'_> {
    /// The `k` samples for input `x`, seeded by `seed` and the bits of `x`.
    pub fn samples(&self, x: &[f64]) -> Result<Matrix> {
        ddpm_sample_respaced(self.model, x, self.k, self.sampler_steps, self.key(x))
    }

    /// [`samples`](Self::samples) for every row of `xs`, batched across inputs.
    pub fn samples_paired(&self, xs: ArrayView2<f64>) -> Result<Vec<Matrix>> {
        let seeds: Vec<u64> = xs
            .axis_iter(Axis(0))
            .map(|x| self.key(&x.to_vec()))
            .collect();
        ddpm_sample_paired(self.model, xs, self.k, self.sampler_steps, &seeds)
    }

    fn key(&self, x: &[f64]) -> u64 {
        x.iter()
            .fold(self.seed, |acc, v| mix_seed(acc, v.to_bits()))
    }
}

/// A score of any kind with its auxiliaries bound.
#[derive(Clone)]
pub enum ScoreFunction<'a> {
    Trace(ScoreKind, TraceScore<'a>),
    Ellipsoid(&'a PointPredictor),
    Rectangle(&'a PointPredictor),
    Pcp(PcpScore<'a>),
}

impl ScoreFunction<'_> {
    pub fn kind(&self) -> ScoreKind {
        match self {
            ScoreFunction::Trace(k, _) => *k,
            ScoreFunction::Ellipsoid(_) => ScoreKind::Ellipsoid,
            ScoreFunction::Rectangle(_) => ScoreKind::Rectangle,
            ScoreFunction::Pcp(_) => ScoreKind::Pcp,
        }
    }

    pub fn bank_hash(&self) -> Option<String> {
        match self {
            ScoreFunction::Trace(_, t) => Some(t.bank().hash()),
            _ => None,
        }
    }

    /// Scores of every row of `ys` at input `x`.
    pub fn scores(&self, x: &[f64], ys: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            ScoreFunction::Trace(_, t) => t.scores(x, ys),
            ScoreFunction::Ellipsoid(p) | ScoreFunction::Rectangle(p) => {
                let yhat = p.predict(x)?;
                if ys.ncols() != yhat.len() {
                    return Err(Error::invalid(
                        "target dimension differs from the predictor output",
                    ));
                }
                let ellipsoid = matches!(self, ScoreFunction::Ellipsoid(_));
                ys.axis_iter(Axis(0))
                    .map(|y| {
                        let r: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
                        if ellipsoid {
                            p.mahalanobis(&r)
                        } else {
                            p.standardized_max(&r)
                        }
                    })
                    .collect()
            }
            ScoreFunction::Pcp(p) => pcp_scores(p.samples(x)?.view(), ys),
        }
    }

    /// Scores of the pairs `(xs[i], ys[i])`; equal to scoring each pair alone.
    pub fn scores_paired(&self, xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<Vec<f64>> {
        if xs.nrows() != ys.nrows() {
            return Err(Error::invalid("need one input row per candidate row"));
        }
        match self {
            ScoreFunction::Trace(_, t) => t.scores_paired(xs, ys),
            ScoreFunction::Ellipsoid(p) | ScoreFunction::Rectangle(p) => {
                let pred = p.predict_batch(xs)?;
                if ys.ncols() != pred.ncols() {
                    return Err(Error::invalid(
                        "target dimension differs from the predictor output",
                    ));
                }
                let resid = &ys - &pred;
                let ellipsoid = matches!(self, ScoreFunction::Ellipsoid(_));
                resid
                    .axis_iter(Axis(0))
                    .map(|r| {
                        let r = r.to_vec();
                        if ellipsoid {
                            p.mahalanobis(&r)
                        } else {
                            p.standardized_max(&r)
                        }
                    })
                    .collect()
            }
            ScoreFunction::Pcp(p) => {
                let samples = p.samples_paired(xs)?;
                samples
                    .iter()
                    .zip(ys.axis_iter(Axis(0)))
                    .map(|(s, y)| Ok(pcp_scores(s.view(), y.insert_axis(Axis(0)))?[0]))
                    .collect()
            }
        }
    }

    /// Membership `score <= threshold` for every row of `ys`.
    pub fn within(
        &self,
        x: &[f64],
        ys: ArrayView2<f64>,
        threshold: Threshold,
    ) -> Result<Vec<bool>> {
        match self {
            ScoreFunction::Trace(_, t) => t.within(x, ys, threshold),
            _ => Ok(self
                .scores(x, ys)?
                .into_iter()
                .map(|s| threshold.admits(s))
                .collect()),
        }
    }
}

impl Nonconformity for ScoreFunction<'_> {
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ys = ndarray::aview1(y).insert_axis(Axis(0));
        Ok(self.scores(x, ys)?[0])
    }
}

/// One exported score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub point_id: usize,
    pub score_kind: ScoreKind,
    pub value: f64,
}

/// CSV with header `point_id,score_kind,value`.
pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let io = |e: csv::Error| Error::Schema(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
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
