//! The 2×2 synthetic design: spiral or pinwheel noise crossed with a
//! low-dimensional (2 inputs, k = 1) or high-dimensional (7 inputs, k = 5) regime.
//!
//! `Y = k * f(x1, x2) + noise`, where only the first two input columns enter `f`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{stream_rng, STREAM_DATA};

pub const PINWHEEL_COMPONENTS: usize = 6;
pub const PINWHEEL_RADIUS: f64 = 3.0;
pub const PINWHEEL_ECCENTRICITY: f64 = 0.16;
const SPIRAL_SD: [f64; 2] = [0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Spiral,
    Pinwheel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Two inputs centred at (-2, -1.5), signal scale 1.
    L,
    /// Seven standard-normal inputs (five nuisance), signal scale 5.
    H,
}

impl Regime {
    pub fn x_dim(self) -> usize {
        match self {
            Regime::L => 2,
            Regime::H => 7,
        }
    }

    pub fn signal_scale(self) -> f64 {
        match self {
            Regime::L => 1.0,
            Regime::H => 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub noise: NoiseKind,
    pub regime: Regime,
    pub n: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn name(&self) -> String {
        let noise = match self.noise {
            NoiseKind::Spiral => "spiral",
            NoiseKind::Pinwheel => "pinwheel",
        };
        let regime = match self.regime {
            Regime::L => "L",
            Regime::H => "H",
        };
        format!("{noise}_{regime}")
    }
}

impl fmt::Display for SyntheticConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses `spiral_L`, `pinwheel_H`, ... (case-insensitive).
impl FromStr for SyntheticConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (noise, regime) = lower
            .split_once('_')
            .ok_or_else(|| Error::invalid(format!("unknown synthetic dataset {s}")))?;
        let noise = match noise {
            "spiral" => NoiseKind::Spiral,
            "pinwheel" => NoiseKind::Pinwheel,
            _ => return Err(Error::invalid(format!("unknown noise kind in {s}"))),
        };
        let regime = match regime {
            "l" => Regime::L,
            "h" => Regime::H,
            _ => return Err(Error::invalid(format!("unknown regime in {s}"))),
        };
        Ok(SyntheticConfig {
            noise,
            regime,
            n: 4000,
            seed: 0,
        })
    }
}

/// Shared conditional mean map.
pub fn mean_fn(x1: f64, x2: f64) -> [f64; 2] {
    [
        2.0 * x1.powi(3) - 3.0 * x2 * x2 + 5.0 * x2 + x1 * x2,
        x1 * x1 * x2 - 4.0 * x2 * x2 + 3.0 * x1 * x1 * x2 + 7.0,
    ]
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Angle and noise vector of one spiral draw.
fn spiral_draw(rng: &mut ChaCha8Rng) -> (f64, [f64; 2]) {
    let theta = rng.gen_range(0.0..2.0 * PI);
    let e1 = theta * theta.cos() + SPIRAL_SD[0] * normal(rng);
    let e2 = theta * theta.sin() + SPIRAL_SD[1] * normal(rng);
    (theta, [e1, e2])
}

/// Mean and covariance of pinwheel component `k`.
pub fn pinwheel_component(k: usize) -> ([f64; 2], [[f64; 2]; 2]) {
    let theta = 2.0 * PI * k as f64 / PINWHEEL_COMPONENTS as f64;
    let (s, c) = theta.sin_cos();
    let e2 = PINWHEEL_ECCENTRICITY * PINWHEEL_ECCENTRICITY;
    // Q diag(1, e^2) Q^T with Q the rotation by theta.
    let cov = [
        [c * c + e2 * s * s, c * s - e2 * c * s],
        [c * s - e2 * c * s, s * s + e2 * c * c],
    ];
    ([PINWHEEL_RADIUS * c, PINWHEEL_RADIUS * s], cov)
}

fn pinwheel_draw(rng: &mut ChaCha8Rng) -> (usize, [f64; 2]) {
    let k = rng.gen_range(0..PINWHEEL_COMPONENTS);
    let theta = 2.0 * PI * k as f64 / PINWHEEL_COMPONENTS as f64;
    let (s, c) = theta.sin_cos();
    let u1 = normal(rng);
    let u2 = PINWHEEL_ECCENTRICITY * normal(rng);
    let e1 = PINWHEEL_RADIUS * c + c * u1 - s * u2;
    let e2 = PINWHEEL_RADIUS * s + s * u1 + c * u2;
    (k, [e1, e2])
}

pub fn spiral_noise(seed: u64, n: usize) -> Vec<[f64; 2]> {
    let mut rng = stream_rng(seed, STREAM_DATA);
    (0..n).map(|_| spiral_draw(&mut rng).1).collect()
}

pub fn pinwheel_noise(seed: u64, n: usize) -> Vec<[f64; 2]> {
    let mut rng = stream_rng(seed, STREAM_DATA);
    (0..n).map(|_| pinwheel_draw(&mut rng).1).collect()
}

fn raw_synthetic(
    cfg: &SyntheticConfig,
    mut noise: impl FnMut(&mut ChaCha8Rng) -> [f64; 2],
) -> (Matrix, Matrix) {
    let mut rng = stream_rng(cfg.seed, STREAM_DATA);
    let p = cfg.regime.x_dim();
    let k = cfg.regime.signal_scale();
    let offset = match cfg.regime {
        Regime::L => vec![-2.0, -1.5],
        Regime::H => vec![0.0; p],
    };
    let mut x = Matrix::zeros((cfg.n, p));
    let mut y = Matrix::zeros((cfg.n, 2));
    for i in 0..cfg.n {
        for j in 0..p {
            x[[i, j]] = offset[j] + normal(&mut rng);
        }
        let f = mean_fn(x[[i, 0]], x[[i, 1]]);
        let e = noise(&mut rng);
        y[[i, 0]] = k * f[0] + e[0];
        y[[i, 1]] = k * f[1] + e[1];
    }
    (x, y)
}

/// Generate one of the four synthetic datasets. `Y` is normalized, `X` is not.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n < 2 {
        return Err(Error::invalid("synthetic datasets need at least 2 rows"));
    }
    let (x, y) = match cfg.noise {
        NoiseKind::Spiral => raw_synthetic(cfg, |r| spiral_draw(r).1),
        NoiseKind::Pinwheel => raw_synthetic(cfg, |r| pinwheel_draw(r).1),
    };
    Dataset::from_raw(x, y, format!("synthetic:{}:seed={}", cfg.name(), cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::column_stats;

    #[test]
    fn mean_fn_hand_values() {
        assert_eq!(mean_fn(0.0, 0.0), [0.0, 7.0]);
        assert_eq!(mean_fn(1.0, 0.0), [2.0, 7.0]);
        assert_eq!(mean_fn(0.0, 1.0), [2.0, 3.0]);
    }

    #[test]
    fn spiral_special_angles() {
        // Deterministic part of the spiral at fixed angles.
        let at = |theta: f64| [theta * theta.cos(), theta * theta.sin()];
        assert_eq!(at(0.0), [0.0, 0.0]);
        let q = at(PI / 2.0);
        assert!(q[0].abs() < 1e-15);
        assert!((q[1] - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn spiral_residual_spread() {
        let mut rng = stream_rng(3, STREAM_DATA);
        let n = 100_000;
        let (mut s1, mut s2) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (theta, e) = spiral_draw(&mut rng);
            s1.push(e[0] - theta * theta.cos());
            s2.push(e[1] - theta * theta.sin());
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!((sd(&s1) - 0.2).abs() < 0.01);
        assert!((sd(&s2) - 0.1).abs() < 0.005);
    }

    #[test]
    fn pinwheel_first_component() {
        let (mu, cov) = pinwheel_component(0);
        assert_eq!(mu, [3.0, 0.0]);
        assert!((cov[0][0] - 1.0).abs() < 1e-15);
        assert!((cov[1][1] - 0.0256).abs() < 1e-15);
        assert!(cov[0][1].abs() < 1e-15);
    }

    #[test]
    fn pinwheel_component_frequencies() {
        let mut rng = stream_rng(5, STREAM_DATA);
        let n = 60_000;
        let mut counts = [0usize; PINWHEEL_COMPONENTS];
        for _ in 0..n {
            counts[pinwheel_draw(&mut rng).0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn pinwheel_component_covariances() {
        let mut rng = stream_rng(6, STREAM_DATA);
        let mut samples: Vec<Vec<[f64; 2]>> = vec![Vec::new(); PINWHEEL_COMPONENTS];
        while samples.iter().any(|s| s.len() < 10_000) {
            let (k, e) = pinwheel_draw(&mut rng);
            if samples[k].len() < 10_000 {
                samples[k].push(e);
            }
        }
        for (k, s) in samples.iter().enumerate() {
            let n = s.len() as f64;
            let m = [
                s.iter().map(|e| e[0]).sum::<f64>() / n,
                s.iter().map(|e| e[1]).sum::<f64>() / n,
            ];
            let mut c = [[0.0; 2]; 2];
            for e in s {
                for a in 0..2 {
                    for b in 0..2 {
                        c[a][b] += (e[a] - m[a]) * (e[b] - m[b]) / n;
                    }
                }
            }
            let (_, truth) = pinwheel_component(k);
            let diff: f64 = (0..4)
                .map(|i| (c[i / 2][i % 2] - truth[i / 2][i % 2]).powi(2))
                .sum();
            let norm: f64 = (0..4).map(|i| truth[i / 2][i % 2].powi(2)).sum();
            assert!((diff / norm).sqrt() < 0.1, "component {k}");
        }
    }

    #[test]
    fn regimes_shape_inputs() {
        for (regime, p) in [(Regime::L, 2), (Regime::H, 7)] {
            let ds = gen_synthetic(&SyntheticConfig {
                noise: NoiseKind::Spiral,
                regime,
                n: 500,
                seed: 1,
            })
            .unwrap();
            assert_eq!(ds.x_dim(), p);
            assert_eq!(ds.y_dim(), 2);
            let (m, s) = column_stats(&ds.y);
            assert!(m.iter().all(|v| v.abs() < 1e-8));
            assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-8));
        }
    }

    #[test]
    fn zero_noise_recovers_mean_fn() {
        let cfg = SyntheticConfig {
            noise: NoiseKind::Spiral,
            regime: Regime::L,
            n: 50,
            seed: 2,
        };
        let (x, y) = raw_synthetic(&cfg, |_| [0.0, 0.0]);
        let ds = Dataset::from_raw(x.clone(), y, "zero").unwrap();
        let back = ds.denormalize(&ds.y);
        for i in 0..cfg.n {
            let f = mean_fn(x[[i, 0]], x[[i, 1]]);
            assert!((back[[i, 0]] - f[0]).abs() < 1e-9);
            assert!((back[[i, 1]] - f[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn nuisance_columns_uncorrelated() {
        let ds = gen_synthetic(&SyntheticConfig {
            noise: NoiseKind::Pinwheel,
            regime: Regime::H,
            n: 30_000,
            seed: 9,
        })
        .unwrap();
        let corr = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
            let n = a.len() as f64;
            let (ma, mb) = (a.sum() / n, b.sum() / n);
            let cov = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / n;
            let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
            let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
            cov / (sa * sb)
        };
        for j in 2..7 {
            for d in 0..2 {
                let r = corr(ds.x.column(j), ds.y.column(d));
                assert!(r.abs() < 0.05, "column {j} vs y{d}: {r}");
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg: SyntheticConfig = "pinwheel_L".parse().unwrap();
        let a = gen_synthetic(&SyntheticConfig { n: 100, ..cfg }).unwrap();
        let b = gen_synthetic(&SyntheticConfig { n: 100, ..cfg }).unwrap();
        assert_eq!(a, b);
        assert_eq!(spiral_noise(4, 10), spiral_noise(4, 10));
        assert_eq!(pinwheel_noise(4, 10), pinwheel_noise(4, 10));
        assert_ne!(pinwheel_noise(4, 10), pinwheel_noise(5, 10));
    }
}
