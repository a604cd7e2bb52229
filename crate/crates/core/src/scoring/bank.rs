//! Common-random-numbers bank shared by every TRACE score evaluation.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_BANK};

/// Standard-normal draws `xi[t][r]` for every time in `time_set` and repeat `r < repeats`.
///
/// Diffusion banks store step indices (integral values); flow banks store times in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CRNBank {
    pub seed: u64,
    pub time_set: Vec<f64>,
    pub repeats: usize,
    pub dim: usize,
    draws: Vec<f64>,
}

/// `n` step indices `round(j T / n)`, j = 1..n.
pub fn diffusion_steps(n: usize, total_steps: usize) -> Result<Vec<f64>> {
    if n == 0 || n > total_steps {
        return Err(Error::invalid(format!(
            "need 1 <= |T| <= {total_steps}, got {n}"
        )));
    }
    Ok((1..=n)
        .map(|j| ((j * total_steps) as f64 / n as f64).round())
        .collect())
}

/// Interior grid `j / (n + 1)`, j = 1..n.
pub fn fm_grid(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("time set must not be empty"));
    }
    Ok((1..=n).map(|j| j as f64 / (n + 1) as f64).collect())
}

/// `n` sorted uniform times in (0, 1), drawn from `seed`.
pub fn fm_random_times(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("time set must not be empty"));
    }
    let mut rng = stream_rng(seed, STREAM_BANK ^ 0x5eed);
    let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(f64::EPSILON..1.0)).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    if t.len() != n {
        return Err(Error::invalid("random time draw produced duplicates"));
    }
    Ok(t)
}

pub fn build_bank(seed: u64, time_set: &[f64], repeats: usize, dim: usize) -> Result<CRNBank> {
    if time_set.is_empty() {
        return Err(Error::invalid("time set must not be empty"));
    }
    if repeats == 0 || dim == 0 {
        return Err(Error::invalid("repeats and dimension must be at least 1"));
    }
    if time_set.iter().any(|t| !t.is_finite()) || time_set.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "time set must be finite and strictly increasing",
        ));
    }
    let mut rng = stream_rng(seed, STREAM_BANK);
    let draws = (0..time_set.len() * repeats * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Ok(CRNBank {
        seed,
        time_set: time_set.to_vec(),
        repeats,
        dim,
        draws,
    })
}

impl CRNBank {
    /// Build a bank from explicit draws, laid out time-major then repeat then coordinate.
    pub fn from_draws(
        time_set: Vec<f64>,
        repeats: usize,
        dim: usize,
        draws: Vec<f64>,
    ) -> Result<Self> {
        let mut bank = build_bank(0, &time_set, repeats, dim)?;
        if draws.len() != bank.draws.len() || draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "expected {} finite draws, got {}",
                bank.draws.len(),
                draws.len()
            )));
        }
        bank.draws = draws;
        Ok(bank)
    }

    /// `B = |T| R`.
    pub fn budget(&self) -> usize {
        self.time_set.len() * self.repeats
    }

    pub fn len(&self) -> usize {
        self.budget()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw(&self, t_index: usize, r: usize) -> &[f64] {
        let start = (t_index * self.repeats + r) * self.dim;
        &self.draws[start..start + self.dim]
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// Time values as diffusion step indices; errors unless all are integers in `1..=total`.
    pub fn steps(&self, total: usize) -> Result<Vec<usize>> {
        self.time_set
            .iter()
            .map(|&t| {
                if t.fract() == 0.0 && t >= 1.0 && t <= total as f64 {
                    Ok(t as usize)
                } else {
                    Err(Error::invalid(format!(
                        "bank time {t} is not a step in 1..={total}"
                    )))
                }
            })
            .collect()
    }

    /// Check that all times lie in (0, 1].
    pub fn check_unit_times(&self) -> Result<()> {
        match self.time_set.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            Some(t) => Err(Error::invalid(format!("bank time {t} outside (0, 1]"))),
            None => Ok(()),
        }
    }

    /// SHA-256 over the shape and the little-endian draw bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.time_set.len() as u64).to_le_bytes());
        h.update((self.repeats as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for t in &self.time_set {
            h.update(t.to_le_bytes());
        }
        for v in &self.draws {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn record(&self) -> BankRecord {
        BankRecord {
            seed: self.seed,
            time_set: self.time_set.clone(),
            repeats: self.repeats,
            dim: self.dim,
            draws_sha256: self.hash(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.record()).expect("bank record serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Regenerate a bank from its record and verify the draw hash.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: BankRecord = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        rec.rebuild()
    }
}

/// Serialized form: the draws are regenerated from the seed and checked against the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub seed: u64,
    pub time_set: Vec<f64>,
    #[serde(rename = "R")]
    pub repeats: usize,
    pub dim: usize,
    pub draws_sha256: String,
}

impl BankRecord {
    pub fn rebuild(&self) -> Result<CRNBank> {
        let bank = build_bank(self.seed, &self.time_set, self.repeats, self.dim)?;
        if bank.hash() != self.draws_sha256 {
            return Err(Error::Schema(format!(
                "bank hash mismatch: stored {}, regenerated {}",
                self.draws_sha256,
                bank.hash()
            )));
        }
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget_shape() {
        let bank = build_bank(1, &fm_grid(15).unwrap(), 8, 2).unwrap();
        assert_eq!(bank.budget(), 120);
        assert_eq!(bank.draws().len() / bank.dim, 240 / 2);
        assert_eq!(bank.draws().len(), 240);
    }

    #[test]
    fn deterministic_by_seed() {
        let t = fm_grid(4).unwrap();
        let a = build_bank(3, &t, 5, 2).unwrap();
        assert_eq!(a, build_bank(3, &t, 5, 2).unwrap());
        assert_eq!(a.hash(), build_bank(3, &t, 5, 2).unwrap().hash());
        assert_ne!(a.draws(), build_bank(4, &t, 5, 2).unwrap().draws());
    }

    #[test]
    fn draws_are_centred() {
        let bank = build_bank(11, &fm_grid(15).unwrap(), 8, 2).unwrap();
        let n = (bank.budget()) as f64;
        for j in 0..2 {
            let mean = bank.draws().iter().skip(j).step_by(2).sum::<f64>() / n;
            assert!(
                mean.abs() < 4.0 / (240.0f64 * 2.0).sqrt(),
                "coord {j}: {mean}"
            );
        }
    }

    #[test]
    fn invalid_banks() {
        assert!(build_bank(0, &[], 1, 1).is_err());
        assert!(build_bank(0, &[0.5], 0, 1).is_err());
        assert!(build_bank(0, &[0.5, 0.5], 1, 1).is_err());
        assert!(build_bank(0, &[0.6, 0.5], 1, 1).is_err());
        assert!(CRNBank::from_draws(vec![0.5], 1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn time_grids() {
        assert_eq!(
            diffusion_steps(4, 1000).unwrap(),
            vec![250.0, 500.0, 750.0, 1000.0]
        );
        assert_eq!(
            diffusion_steps(3, 1000).unwrap(),
            vec![333.0, 667.0, 1000.0]
        );
        assert!(diffusion_steps(0, 10).is_err());
        assert_eq!(fm_grid(3).unwrap(), vec![0.25, 0.5, 0.75]);
        let r = fm_random_times(10, 4).unwrap();
        assert!(r.windows(2).all(|w| w[0] < w[1]) && r[0] > 0.0 && r[9] < 1.0);
        let b = build_bank(0, &diffusion_steps(15, 1000).unwrap(), 2, 2).unwrap();
        assert_eq!(b.steps(1000).unwrap()[14], 1000);
        assert!(b.steps(500).is_err());
        assert!(b.check_unit_times().is_err());
    }

    #[test]
    fn record_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let bank = build_bank(7, &fm_grid(5).unwrap(), 3, 2).unwrap();
        bank.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"R\": 3") && text.contains("draws_sha256"));
        assert_eq!(CRNBank::load(&path).unwrap(), bank);
        let mut rec = bank.record();
        rec.seed = 8;
        assert!(rec.rebuild().is_err());
    }
}
