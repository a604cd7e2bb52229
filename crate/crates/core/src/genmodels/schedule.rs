use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-beta DDPM schedule. Steps are 1-based: step `t` uses index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Serializable schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        beta_min,
        beta_max,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps(),
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }

    fn index(&self, step: usize) -> Result<usize> {
        if step == 0 || step > self.steps() {
            return Err(Error::invalid(format!(
                "diffusion step {step} outside 1..={}",
                self.steps()
            )));
        }
        Ok(step - 1)
    }

    pub fn alpha_bar_at(&self, step: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(step)?])
    }

    /// Network time input for a step: `t / T`.
    pub fn normalized_time(&self, step: usize) -> f64 {
        step as f64 / self.steps() as f64
    }

    /// VLB weight `beta_t^2 / (2 sigma_t^2 alpha_t (1 - alpha_bar_t))` with `sigma_t^2 = beta_t`.
    pub fn vlb_weight(&self, step: usize) -> Result<f64> {
        let i = self.index(step)?;
        let (b, a, ab) = (self.beta[i], self.alpha[i], self.alpha_bar[i]);
        Ok(b * b / (2.0 * b * a * (1.0 - ab)))
    }
}

/// `y_t = sqrt(alpha_bar_t) y + sqrt(1 - alpha_bar_t) eps`.
pub fn diffuse(y: &[f64], step: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if y.len() != eps.len() {
        return Err(Error::invalid("target and noise dimensions differ"));
    }
    let ab = schedule.alpha_bar_at(step)?;
    Ok(diffuse_with(y, eps, ab))
}

pub(crate) fn diffuse_with(y: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    y.iter().zip(eps).map(|(y, e)| a * y + b * e).collect()
}

/// Straight path `(1 - t) y0 + t y`.
pub fn fm_interpolate(y0: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("path time {t} outside [0, 1]")));
    }
    if y0.len() != y.len() {
        return Err(Error::invalid("path endpoints have different dimensions"));
    }
    Ok(y0
        .iter()
        .zip(y)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}
