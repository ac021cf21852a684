//! Recency weights for training instances.
//!
//! With `j = 0` the most recent instance and `j` growing with age:
//!
//! * exponential: `w_j = α0^(j+1)` (the most recent instance gets `α0`),
//!   floored at `f64::MIN_POSITIVE`,
//! * linear: `w_j = α0 - j·β/L`,
//! * none: `w_j = 1`.
//!
//! Vectors are returned oldest first so they line up with training rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    None,
    Exponential,
    Linear,
}

impl WeightMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightMethod::None => "none",
            WeightMethod::Exponential => "exponential",
            WeightMethod::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingScheme {
    pub method: WeightMethod,
    #[serde(default = "default_rate")]
    pub alpha0: f64,
    #[serde(default = "default_rate")]
    pub beta: f64,
}

fn default_rate() -> f64 {
    0.9
}

impl Default for WeightingScheme {
    fn default() -> Self {
        WeightingScheme::none()
    }
}

impl WeightingScheme {
    pub fn none() -> Self {
        WeightingScheme { method: WeightMethod::None, alpha0: default_rate(), beta: default_rate() }
    }

    pub fn exponential(alpha0: f64) -> Self {
        WeightingScheme { method: WeightMethod::Exponential, alpha0, beta: default_rate() }
    }

    pub fn linear(alpha0: f64, beta: f64) -> Self {
        WeightingScheme { method: WeightMethod::Linear, alpha0, beta }
    }

    /// Scheme of `method` with the default rates `α0 = β = 0.9`.
    pub fn with_method(method: WeightMethod) -> Self {
        WeightingScheme { method, ..WeightingScheme::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == WeightMethod::None {
            return Ok(());
        }
        for (name, v) in [("alpha0", self.alpha0), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidInput(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-instance weights, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weight of the instance `age` steps before the newest one.
    pub fn by_age(&self, age: usize) -> f64 {
        self.0[self.0.len() - 1 - age]
    }
}

pub fn weight_schedule(scheme: &WeightingScheme, series_length: usize) -> Result<WeightVector> {
    if series_length == 0 {
        return Err(Error::InvalidInput("series_length must be at least 1".into()));
    }
    let len = series_length as f64;
    let mut newest_first = Vec::with_capacity(series_length);
    match scheme.method {
        WeightMethod::None => newest_first.resize(series_length, 1.0),
        WeightMethod::Exponential => {
            // very old instances would underflow to zero; keep them at the
            // smallest normal value so every weight stays positive
            let mut w = scheme.alpha0;
            for _ in 0..series_length {
                newest_first.push(w);
                w = (w * scheme.alpha0).max(f64::MIN_POSITIVE);
            }
        }
        WeightMethod::Linear => {
            newest_first.extend((0..series_length).map(|j| scheme.alpha0 - j as f64 * scheme.beta / len));
        }
    }
    if let Some(bad) = newest_first.iter().find(|w| **w <= 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{} schedule of length {series_length} produces non-positive weight {bad}",
            scheme.method.as_str()
        )));
    }
    newest_first.reverse();
    Ok(WeightVector(newest_first))
}
