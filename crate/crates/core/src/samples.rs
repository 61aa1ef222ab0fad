//! Observed-data model.
//!
//! A [`Sample`] holds responses `y`, contaminated predictors `w = x + ε`, and an
//! auxiliary sample `eta` drawn from the measurement-error distribution. The
//! constructors here turn the two common data-availability scenarios
//! (repeated measurements, validation data) into that form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Responses, contaminated predictors and measurement-error draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    y: Vec<f64>,
    w: Vec<f64>,
    eta: Vec<f64>,
    /// Mean removed from `eta` by [`Sample::center_eta`], accumulated.
    eta_shift: f64,
}

/// Two noisy measurements of the same latent predictor per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedMeasurements {
    pub y: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!("{name}[{i}] is not finite"))),
        None => Ok(()),
    }
}

impl Sample {
    pub fn new(y: Vec<f64>, w: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if y.len() != w.len() {
            return Err(Error::InputShape(format!(
                "y has {} entries but w has {}",
                y.len(),
                w.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 observations, got {}",
                y.len()
            )));
        }
        if eta.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 measurement-error draws, got {}",
                eta.len()
            )));
        }
        check_finite("y", &y)?;
        check_finite("w", &w)?;
        check_finite("eta", &eta)?;
        Ok(Self {
            y,
            w,
            eta,
            eta_shift: 0.0,
        })
    }

    /// Half-sum / half-difference transform of repeated measurements.
    ///
    /// `w = (w1 + w2) / 2` and `eta = (w1 - w2) / 2`, so `m = n`. The
    /// transform is valid when one of the two error components is symmetric.
    pub fn from_repeated(rm: RepeatedMeasurements) -> Result<Self> {
        let RepeatedMeasurements { y, w1, w2 } = rm;
        if w1.len() != y.len() || w2.len() != y.len() {
            return Err(Error::InputShape(format!(
                "repeated measurements need equal lengths, got y={}, w1={}, w2={}",
                y.len(),
                w1.len(),
                w2.len()
            )));
        }
        check_finite("w1", &w1)?;
        check_finite("w2", &w2)?;
        let w = w1.iter().zip(&w2).map(|(a, b)| 0.5 * (a + b)).collect();
        let eta = w1.iter().zip(&w2).map(|(a, b)| 0.5 * (a - b)).collect();
        Self::new(y, w, eta)
    }

    /// Data combination: `(y, w)` from the primary sample, `eta = w_val - x_val`
    /// from a validation sample where the true predictor is observed.
    pub fn from_validation(
        y: Vec<f64>,
        w: Vec<f64>,
        x_val: &[f64],
        w_val: &[f64],
    ) -> Result<Self> {
        if x_val.len() != w_val.len() {
            return Err(Error::InputShape(format!(
                "validation columns differ in length: x={}, w={}",
                x_val.len(),
                w_val.len()
            )));
        }
        let eta = w_val.iter().zip(x_val).map(|(w, x)| w - x).collect();
        Self::new(y, w, eta)
    }

    /// Subtract the sample mean of `eta`. Idempotent up to round-off.
    pub fn center_eta(mut self) -> Self {
        let mean = self.eta.iter().sum::<f64>() / self.eta.len() as f64;
        if mean != 0.0 {
            for e in &mut self.eta {
                *e -= mean;
            }
            self.eta_shift += mean;
        }
        self
    }

    /// Same sample with a different response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::InputShape(format!(
                "replacement response has {} entries, expected {}",
                y.len(),
                self.y.len()
            )));
        }
        check_finite("y", &y)?;
        Ok(Self {
            y,
            w: self.w.clone(),
            eta: self.eta.clone(),
            eta_shift: self.eta_shift,
        })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Number of `(y, w)` observations.
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of measurement-error draws.
    pub fn m(&self) -> usize {
        self.eta.len()
    }

    /// Total mean subtracted from `eta` so far.
    pub fn eta_shift(&self) -> f64 {
        self.eta_shift
    }

    pub fn w_range(&self) -> (f64, f64) {
        self.w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Sample standard deviation of `w` (denominator `n - 1`).
    pub fn w_sd(&self) -> f64 {
        let n = self.w.len() as f64;
        let mean = self.w.iter().sum::<f64>() / n;
        let ss: f64 = self.w.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    }
}
