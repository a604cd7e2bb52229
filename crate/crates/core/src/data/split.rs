//! Seeded train / calibration / test partition.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_SPLIT};

/// Training 67.5%, calibration 22.5%, test 10%.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.675, 0.225, 0.10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

/// Shuffle `0..n` with `seed`, then cut into contiguous train/calibration/test blocks.
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_cal = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = perm.split_off(n_train + n_cal);
    let calibration = perm.split_off(n_train);
    Ok(SplitAssignment {
        train: perm,
        calibration,
        test,
        fractions,
        seed,
    })
}
