//! TRACE scores: mean transport loss over a fixed bank of auxiliary draws.

use ndarray::{ArrayView2, Axis};

use super::bank::CRNBank;
use crate::conformal::Threshold;
use crate::error::{Error, Result};
use crate::genmodels::{NoisePredictor, NoiseSchedule, VelocityPredictor};
use crate::nn::Matrix;

/// VLB weights `beta^2 / (2 sigma^2 alpha (1 - alpha_bar))`, `sigma^2 = beta`, scaled to mean 1 over `steps`.
pub fn vlb_weights(schedule: &NoiseSchedule, steps: &[usize]) -> Result<Vec<f64>> {
    if steps.is_empty() {
        return Err(Error::invalid("time set must not be empty"));
    }
    let raw = steps
        .iter()
        .map(|&s| schedule.vlb_weight(s))
        .collect::<Result<Vec<_>>>()?;
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Conditioning for a batch: one input shared by every row, or one input per row.
#[derive(Clone, Copy)]
enum Cond<'b> {
    Shared(&'b [f64]),
    Rows(ArrayView2<'b, f64>),
}

#[derive(Clone, Copy)]
enum Field<'a> {
    Noise(&'a dyn NoisePredictor),
    Velocity(&'a dyn VelocityPredictor),
}

/// A TRACE score bound to a model and a bank.
#[derive(Clone)]
pub struct TraceScore<'a> {
    field: Field<'a>,
    bank: &'a CRNBank,
    /// Diffusion step per bank time; empty for flows.
    steps: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> TraceScore<'a> {
    /// Uniformly weighted denoising loss.
    pub fn diffusion(model: &'a dyn NoisePredictor, bank: &'a CRNBank) -> Result<Self> {
        let w = vec![1.0; bank.time_set.len()];
        Self::weighted_diffusion(model, bank, w)
    }

    /// Denoising loss with normalized VLB weights.
    pub fn vlb(model: &'a dyn NoisePredictor, bank: &'a CRNBank) -> Result<Self> {
        let steps = bank.steps(model.schedule().steps())?;
        let w = vlb_weights(model.schedule(), &steps)?;
        Self::weighted_diffusion(model, bank, w)
    }

    /// Denoising loss with explicit per-time weights.
    pub fn weighted_diffusion(
        model: &'a dyn NoisePredictor,
        bank: &'a CRNBank,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let steps = bank.steps(model.schedule().steps())?;
        if weights.len() != steps.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(
                "need one finite non-negative weight per bank time",
            ));
        }
        if bank.dim != model.target_dim() {
            return Err(Error::invalid(
                "bank dimension differs from the model target dimension",
            ));
        }
        Ok(TraceScore {
            field: Field::Noise(model),
            bank,
            steps,
            weights,
        })
    }

    /// Flow-matching transport loss.
    pub fn flow(model: &'a dyn VelocityPredictor, bank: &'a CRNBank) -> Result<Self> {
        bank.check_unit_times()?;
        if bank.dim != model.target_dim() {
            return Err(Error::invalid(
                "bank dimension differs from the model target dimension",
            ));
        }
        Ok(TraceScore {
            field: Field::Velocity(model),
            bank,
            steps: Vec::new(),
            weights: vec![1.0; bank.time_set.len()],
        })
    }

    pub fn bank(&self) -> &CRNBank {
        self.bank
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, ys: ArrayView2<f64>) -> Result<()> {
        if ys.ncols() != self.bank.dim {
            return Err(Error::invalid(format!(
                "candidate dimension {} differs from target dimension {}",
                ys.ncols(),
                self.bank.dim
            )));
        }
        Ok(())
    }

    /// Squared transport error of every row of `ys` for bank entry `(k, r)`.
    fn term(&self, k: usize, r: usize, x: Cond, ys: ArrayView2<f64>) -> Result<Vec<f64>> {
        let xi = self.bank.draw(k, r);
        let xi_row = ndarray::aview1(xi);
        let (pred, mut target) = match self.field {
            Field::Noise(m) => {
                let step = self.steps[k];
                let ab = m.schedule().alpha_bar_at(step)?;
                let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                let mut states = ys.to_owned() * a;
                states += &(&xi_row * b);
                let pred = match x {
                    Cond::Shared(x) => m.predict_noise(states.view(), step, x)?,
                    Cond::Rows(xs) => m.predict_noise_rows(states.view(), step, xs)?,
                };
                let target = Matrix::from_shape_fn(ys.dim(), |(_, j)| xi[j]);
                (pred, target)
            }
            Field::Velocity(m) => {
                let t = self.bank.time_set[k];
                let mut states = ys.to_owned() * t;
                states += &(&xi_row * (1.0 - t));
                let pred = match x {
                    Cond::Shared(x) => m.predict_velocity(states.view(), t, x)?,
                    Cond::Rows(xs) => m.predict_velocity_rows(states.view(), t, xs)?,
                };
                let target = &ys - &xi_row;
                (pred, target)
            }
        };
        if pred.dim() != ys.dim() {
            return Err(Error::invalid("model returned the wrong output shape"));
        }
        target -= &pred;
        Ok(target
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|v| v * v).sum())
            .collect())
    }

    /// Unweighted per-entry losses, `n × B`, columns ordered time-major then repeat.
    pub fn loss_matrix(&self, x: &[f64], ys: ArrayView2<f64>) -> Result<Matrix> {
        self.losses(Cond::Shared(x), ys)
    }

    /// [`loss_matrix`](Self::loss_matrix) for pairs `(xs[i], ys[i])`.
    pub fn loss_matrix_paired(&self, xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<Matrix> {
        self.check_pairs(xs, ys)?;
        self.losses(Cond::Rows(xs), ys)
    }

    fn losses(&self, x: Cond, ys: ArrayView2<f64>) -> Result<Matrix> {
        self.check(ys)?;
        let (n, reps) = (ys.nrows(), self.bank.repeats);
        let mut out = Matrix::zeros((n, self.bank.budget()));
        for k in 0..self.bank.time_set.len() {
            for r in 0..reps {
                let term = self.term(k, r, x, ys)?;
                out.column_mut(k * reps + r).assign(&ndarray::aview1(&term));
            }
        }
        Ok(out)
    }

    /// Scores of every row of `ys` at input `x`.
    pub fn scores(&self, x: &[f64], ys: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.accumulate(Cond::Shared(x), ys)
    }

    /// Scores of the pairs `(xs[i], ys[i])`, batched across pairs.
    pub fn scores_paired(&self, xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_pairs(xs, ys)?;
        self.accumulate(Cond::Rows(xs), ys)
    }

    fn check_pairs(&self, xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<()> {
        if xs.nrows() != ys.nrows() {
            return Err(Error::invalid("need one input row per candidate row"));
        }
        Ok(())
    }

    fn accumulate(&self, x: Cond, ys: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check(ys)?;
        let mut sums = vec![0.0; ys.nrows()];
        for k in 0..self.bank.time_set.len() {
            let w = self.weights[k];
            for r in 0..self.bank.repeats {
                let term = self.term(k, r, x, ys)?;
                sums.iter_mut().zip(&term).for_each(|(s, v)| *s += w * v);
            }
        }
        let b = self.bank.budget() as f64;
        finite(sums.into_iter().map(|s| s / b).collect())
    }

    pub fn score(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ys = ndarray::aview1(y).insert_axis(Axis(0));
        Ok(self.scores(x, ys)?[0])
    }

    /// Membership `score <= threshold` for every row of `ys`.
    ///
    /// Every loss term is non-negative, so a row whose running mean already exceeds
    /// the threshold is dropped from later network evaluations without changing the result.
    pub fn within(
        &self,
        x: &[f64],
        ys: ArrayView2<f64>,
        threshold: Threshold,
    ) -> Result<Vec<bool>> {
        self.check(ys)?;
        let q = match threshold {
            Threshold::Unbounded => return Ok(vec![true; ys.nrows()]),
            Threshold::Finite(q) => q,
        };
        let b = self.bank.budget() as f64;
        let mut sums = vec![0.0; ys.nrows()];
        let mut alive: Vec<usize> = (0..ys.nrows()).collect();
        let mut sub = ys.to_owned();
        for k in 0..self.bank.time_set.len() {
            let w = self.weights[k];
            for r in 0..self.bank.repeats {
                if alive.is_empty() {
                    return Ok(vec![false; ys.nrows()]);
                }
                let term = self.term(k, r, Cond::Shared(x), sub.view())?;
                for (&i, v) in alive.iter().zip(&term) {
                    sums[i] += w * v;
                }
            }
            let keep: Vec<usize> = (0..alive.len())
                .filter(|&a| sums[alive[a]] / b <= q)
                .collect();
            if keep.len() < alive.len() {
                sub = sub.select(Axis(0), &keep);
                alive = keep.iter().map(|&a| alive[a]).collect();
            }
        }
        let mut inside = vec![false; ys.nrows()];
        for i in alive {
            let s = sums[i] / b;
            if !s.is_finite() {
                return Err(Error::numeric("non-finite TRACE score"));
            }
            inside[i] = s <= q;
        }
        Ok(inside)
    }
}

fn finite(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("non-finite TRACE score"));
    }
    Ok(v)
}
