//! Datasets: synthetic generators, CSV ingestion, normalization and splitting.

mod csv_io;
mod split;
mod synthetic;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, write_csv};
pub use split::{split, SplitAssignment, DEFAULT_FRACTIONS};
pub use synthetic::{
    gen_synthetic, mean_fn, pinwheel_component, pinwheel_noise, spiral_noise, NoiseKind, Regime,
    SyntheticConfig, PINWHEEL_COMPONENTS, PINWHEEL_ECCENTRICITY, PINWHEEL_RADIUS,
};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::regions::VolumeEstimate;

/// Paired inputs and normalized targets.
///
/// `y` is stored normalized; `y_mean`/`y_std` map it back to original units.
/// Standard deviations use the population convention (denominator n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    /// Per-column input standardization, when inputs were standardized.
    pub x_scaling: Option<(Vec<f64>, Vec<f64>)>,
    pub provenance: String,
}

/// Column means and population standard deviations.
pub fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let mean: Vec<f64> = m.mean_axis(Axis(0)).map(|a| a.to_vec()).unwrap_or_default();
    let std = m
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(col, mu)| (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

fn standardize(m: &Matrix, what: &str) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    if m.nrows() == 0 {
        return Err(Error::invalid(format!("{what} has no rows")));
    }
    let (mean, std) = column_stats(m);
    if let Some(j) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} column {j} has zero or non-finite spread"
        )));
    }
    let mut out = m.clone();
    for (mut col, (mu, sd)) in out.axis_iter_mut(Axis(1)).zip(mean.iter().zip(&std)) {
        col.mapv_inplace(|v| (v - mu) / sd);
    }
    Ok((out, mean, std))
}

impl Dataset {
    /// Normalize raw targets; inputs are kept as given.
    pub fn from_raw(x: Matrix, y_raw: Matrix, provenance: impl Into<String>) -> Result<Self> {
        if x.nrows() != y_raw.nrows() {
            return Err(Error::invalid(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y_raw.nrows()
            )));
        }
        let (y, y_mean, y_std) = standardize(&y_raw, "Y")?;
        Ok(Dataset {
            x,
            y,
            y_mean,
            y_std,
            x_scaling: None,
            provenance: provenance.into(),
        })
    }

    /// Wrap targets that are already on the model scale (identity normalization).
    pub fn from_normalized(x: Matrix, y: Matrix, provenance: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::invalid("X and Y row counts differ"));
        }
        let q = y.ncols();
        Ok(Dataset {
            x,
            y,
            y_mean: vec![0.0; q],
            y_std: vec![1.0; q],
            x_scaling: None,
            provenance: provenance.into(),
        })
    }

    /// Standardize the input columns in place, recording the statistics.
    pub fn standardize_inputs(&mut self) -> Result<()> {
        let (x, mean, std) = standardize(&self.x, "X")?;
        self.x = x;
        self.x_scaling = Some((mean, std));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn y_dim(&self) -> usize {
        self.y.ncols()
    }

    /// Rows `indices`, keeping the normalization of the parent.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y: self.y.select(Axis(0), indices),
            y_mean: self.y_mean.clone(),
            y_std: self.y_std.clone(),
            x_scaling: self.x_scaling.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Map normalized targets back to original units.
    pub fn denormalize(&self, y: &Matrix) -> Matrix {
        let mut out = y.clone();
        for (mut col, (mu, sd)) in out
            .axis_iter_mut(Axis(1))
            .zip(self.y_mean.iter().zip(&self.y_std))
        {
            col.mapv_inplace(|v| v * sd + mu);
        }
        out
    }

    pub fn normalize(&self, y_raw: &Matrix) -> Matrix {
        let mut out = y_raw.clone();
        for (mut col, (mu, sd)) in out
            .axis_iter_mut(Axis(1))
            .zip(self.y_mean.iter().zip(&self.y_std))
        {
            col.mapv_inplace(|v| (v - mu) / sd);
        }
        out
    }

    pub fn metadata(&self, seed: Option<u64>, split_seed: Option<u64>) -> DatasetMeta {
        DatasetMeta {
            provenance: self.provenance.clone(),
            seed,
            split_seed,
            n: self.len(),
            x_dim: self.x_dim(),
            y_dim: self.y_dim(),
            y_mean: self.y_mean.clone(),
            y_std: self.y_std.clone(),
            x_mean: self.x_scaling.as_ref().map(|s| s.0.clone()),
            x_std: self.x_scaling.as_ref().map(|s| s.1.clone()),
            std_convention: "population".into(),
        }
    }
}

/// JSON sidecar describing where a dataset came from and how it was normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: String,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub n: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub x_mean: Option<Vec<f64>>,
    pub x_std: Option<Vec<f64>>,
    pub std_convention: String,
}

/// Convert a volume measured in normalized target units back to original units.
pub fn volume_rescale(estimate: &VolumeEstimate, y_std: &[f64]) -> f64 {
    estimate.value * y_std.iter().product::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::BoundingBox;
    use ndarray::array;

    #[test]
    fn normalization_round_trip() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![[1.0, 10.0], [2.0, -3.0], [3.0, 7.5], [8.0, 0.25]];
        let ds = Dataset::from_raw(x, y.clone(), "test").unwrap();
        let (m, s) = column_stats(&ds.y);
        for j in 0..2 {
            assert!(m[j].abs() < 1e-12);
            assert!((s[j] - 1.0).abs() < 1e-12);
        }
        let back = ds.denormalize(&ds.y);
        for (a, b) in back.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_rejected() {
        let x = array![[0.0], [1.0]];
        let y = array![[1.0], [1.0]];
        assert!(Dataset::from_raw(x, y, "c").is_err());
    }

    #[test]
    fn rescale_by_std_product() {
        let est = VolumeEstimate {
            value: 1.0,
            n_points: 16,
            bbox: BoundingBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
        };
        assert_eq!(volume_rescale(&est, &[1.0, 1.0]), 1.0);
        assert_eq!(volume_rescale(&est, &[2.0, 3.0]), 6.0);
    }
}
