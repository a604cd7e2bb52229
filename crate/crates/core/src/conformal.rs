//! Split conformal calibration and region membership.
//!
//! The threshold is the `ceil((1 - alpha)(n_cal + 1))`-th smallest calibration
//! score; when that rank exceeds `n_cal` the region is the whole space and the
//! threshold is [`Threshold::Unbounded`].

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    /// Rank exceeded the calibration size: every candidate is accepted.
    Unbounded,
}

impl Threshold {
    /// Numeric value, `+inf` when unbounded.
    pub fn value(self) -> f64 {
        match self {
            Threshold::Finite(q) => q,
            Threshold::Unbounded => f64::INFINITY,
        }
    }

    pub fn admits(self, score: f64) -> bool {
        match self {
            Threshold::Finite(q) => score <= q,
            Threshold::Unbounded => true,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Threshold::Finite(_))
    }
}

// JSON has no infinity; the unbounded threshold is written as the string "inf".
impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Finite(q) => s.serialize_f64(*q),
            Threshold::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(q) if q == f64::INFINITY => Ok(Threshold::Unbounded),
            Repr::Num(q) => Ok(Threshold::Finite(q)),
            Repr::Text(t) if t == "inf" => Ok(Threshold::Unbounded),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha: f64,
    pub n_cal: usize,
    /// 1-based rank of the order statistic used.
    pub rank: usize,
    pub threshold: Threshold,
    pub sorted_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_kind: Option<String>,
    /// Hash of the bank the scores were computed with, for bank-based scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_hash: Option<String>,
}

impl CalibrationResult {
    pub fn with_provenance(
        mut self,
        score_kind: impl Into<String>,
        bank_hash: Option<String>,
    ) -> Self {
        self.score_kind = Some(score_kind.into());
        self.bank_hash = bank_hash;
        self
    }
}

/// `ceil((1 - alpha)(n + 1))`, guarded against representation error in `1 - alpha`.
pub fn conformal_rank(n_cal: usize, alpha: f64) -> usize {
    let raw = (1.0 - alpha) * (n_cal as f64 + 1.0);
    (raw - 1e-9).ceil().max(1.0) as usize
}

pub fn calibrate(scores: &[f64], alpha: f64) -> Result<CalibrationResult> {
    if scores.is_empty() {
        return Err(Error::invalid("calibration needs at least one score"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!(
            "calibration score {i} is not finite"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n_cal = sorted.len();
    let rank = conformal_rank(n_cal, alpha);
    let threshold = if rank > n_cal {
        Threshold::Unbounded
    } else {
        Threshold::Finite(sorted[rank - 1])
    };
    Ok(CalibrationResult {
        alpha,
        n_cal,
        rank,
        threshold,
        sorted_scores: sorted,
        score_kind: None,
        bank_hash: None,
    })
}

/// Anything that scores a candidate `y` at input `x`.
pub trait Nonconformity {
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64>;
}

impl<F> Nonconformity for F
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self(x, y))
    }
}

/// A calibrated region `{y : score(x, y) <= threshold}`.
#[derive(Debug, Clone)]
pub struct RegionHandle<S> {
    pub score: S,
    pub threshold: Threshold,
}

impl<S: Nonconformity> RegionHandle<S> {
    pub fn new(score: S, calibration: &CalibrationResult) -> Self {
        RegionHandle {
            score,
            threshold: calibration.threshold,
        }
    }

    /// Closed region: a score equal to the threshold is inside.
    pub fn contains(&self, x: &[f64], y: &[f64]) -> Result<bool> {
        if !self.threshold.is_finite() {
            return Ok(true);
        }
        Ok(self.threshold.admits(self.score.score(x, y)?))
    }

    pub fn coverage(&self, test_pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if test_pairs.is_empty() {
            return Err(Error::invalid("coverage needs at least one test pair"));
        }
        let mut hits = 0usize;
        for (x, y) in test_pairs {
            hits += self.contains(x, y)? as usize;
        }
        Ok(hits as f64 / test_pairs.len() as f64)
    }
}

/// Fraction of precomputed test scores admitted by `threshold`.
pub fn coverage_of_scores(test_scores: &[f64], threshold: Threshold) -> Result<f64> {
    if test_scores.is_empty() {
        return Err(Error::invalid("coverage needs at least one test score"));
    }
    let hits = test_scores.iter().filter(|&&s| threshold.admits(s)).count();
    Ok(hits as f64 / test_scores.len() as f64)
}

/// Mean split-conformal coverage over `reps` draws of i.i.d. uniform calibration and test scores.
pub fn simulate_uniform_coverage(
    n_cal: usize,
    n_test: usize,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    if reps == 0 || n_test == 0 {
        return Err(Error::invalid(
            "simulation needs at least one repetition and test point",
        ));
    }
    let mut rng = stream_rng(seed, 0);
    let mut total = 0.0;
    for _ in 0..reps {
        let cal: Vec<f64> = (0..n_cal).map(|_| rng.gen::<f64>()).collect();
        let test: Vec<f64> = (0..n_test).map(|_| rng.gen::<f64>()).collect();
        let result = calibrate(&cal, alpha)?;
        total += coverage_of_scores(&test, result.threshold)?;
    }
    Ok(total / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_to(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    #[test]
    fn hand_ranks() {
        let r = calibrate(&one_to(9), 0.1).unwrap();
        assert_eq!((r.rank, r.threshold), (9, Threshold::Finite(9.0)));
        let r = calibrate(&one_to(19), 0.1).unwrap();
        assert_eq!((r.rank, r.threshold), (18, Threshold::Finite(18.0)));
        let r = calibrate(&one_to(5), 0.1).unwrap();
        assert_eq!(r.rank, 6);
        assert_eq!(r.threshold, Threshold::Unbounded);
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let r = calibrate(&[3.0, 1.0, 2.0, 5.0, 4.0, 9.0, 8.0, 7.0, 6.0], 0.2).unwrap();
        assert_eq!(r.sorted_scores, one_to(9));
        assert_eq!(r.threshold, Threshold::Finite(8.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(calibrate(&[], 0.1).is_err());
        assert!(calibrate(&[1.0], 0.0).is_err());
        assert!(calibrate(&[1.0], 1.0).is_err());
        assert!(calibrate(&[1.0, f64::NAN], 0.1).is_err());
        assert!(calibrate(&[1.0, f64::INFINITY], 0.1).is_err());
    }

    #[test]
    fn membership_rules() {
        let zero = |_: &[f64], _: &[f64]| 0.0;
        let region = RegionHandle {
            score: zero,
            threshold: Threshold::Finite(0.5),
        };
        assert!(region.contains(&[1.0], &[100.0]).unwrap());

        let dist = |_: &[f64], y: &[f64]| y[0].abs();
        let tie = RegionHandle {
            score: dist,
            threshold: Threshold::Finite(2.0),
        };
        assert!(tie.contains(&[], &[2.0]).unwrap());
        assert!(!tie.contains(&[], &[2.0000001]).unwrap());

        let all = RegionHandle {
            score: dist,
            threshold: Threshold::Unbounded,
        };
        assert!(all.contains(&[], &[1e300]).unwrap());
    }

    #[test]
    fn coverage_counts() {
        let dist = |_: &[f64], y: &[f64]| y[0].abs();
        let pairs: Vec<_> = [0.5, 1.5, 2.5, 3.5]
            .iter()
            .map(|&v| (vec![], vec![v]))
            .collect();
        let cover = |q| {
            RegionHandle {
                score: dist,
                threshold: Threshold::Finite(q),
            }
            .coverage(&pairs)
            .unwrap()
        };
        assert_eq!(cover(10.0), 1.0);
        assert_eq!(cover(0.1), 0.0);
        assert_eq!(cover(2.0), 0.5);
        let empty: Vec<(Vec<f64>, Vec<f64>)> = vec![];
        assert!(RegionHandle {
            score: dist,
            threshold: Threshold::Finite(1.0)
        }
        .coverage(&empty)
        .is_err());
    }

    #[test]
    fn json_threshold_sentinel() {
        let r = calibrate(&one_to(5), 0.1).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"threshold\":\"inf\""));
        let back: CalibrationResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let r = calibrate(&one_to(9), 0.1).unwrap();
        let back: CalibrationResult =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.threshold, Threshold::Finite(9.0));
    }

    #[test]
    fn uniform_simulation_coverage() {
        let cov = simulate_uniform_coverage(199, 100, 0.1, 2000, 1).unwrap();
        assert!((0.89..=0.915).contains(&cov), "{cov}");
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..100.0, 1..60)
    }

    proptest! {
        #[test]
        fn threshold_monotone_in_alpha(s in scores(), a in 0.01f64..0.98, da in 0.0f64..0.5) {
            let b = (a + da).min(0.99);
            let qa = calibrate(&s, a).unwrap().threshold.value();
            let qb = calibrate(&s, b).unwrap().threshold.value();
            prop_assert!(qb <= qa);
        }

        #[test]
        fn order_statistic_stability(
            pairs in prop::collection::vec((0.0f64..10.0, -1.0f64..1.0), 1..80),
            alpha in 0.01f64..0.99,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let ra = calibrate(&a, alpha).unwrap();
            let rb = calibrate(&b, alpha).unwrap();
            if let (Threshold::Finite(qa), Threshold::Finite(qb)) = (ra.threshold, rb.threshold) {
                let max_diff = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
                prop_assert!((qa - qb).abs() <= max_diff + 1e-12);
            } else {
                prop_assert_eq!(ra.threshold.is_finite(), rb.threshold.is_finite());
            }
        }

        #[test]
        fn monotone_transform_preserves_membership(
            cal in scores(),
            test in scores(),
            alpha in 0.01f64..0.99,
        ) {
            let f = |v: f64| (v / 7.0).exp() * 3.0 + 1.0;
            let r = calibrate(&cal, alpha).unwrap();
            let cal_t: Vec<f64> = cal.iter().map(|&v| f(v)).collect();
            let rt = calibrate(&cal_t, alpha).unwrap();
            for &s in &test {
                prop_assert_eq!(r.threshold.admits(s), rt.threshold.admits(f(s)));
            }
        }
    }
}
