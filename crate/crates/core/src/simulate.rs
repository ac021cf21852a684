//! Drift stream simulators.
//!
//! Every drifting series is assembled from two realisations `ts1`, `ts2` of
//! the same stationary AR process, started from different initial values and
//! driven by independent noise streams. `ts1` plays the old concept and `ts2`
//! the new one.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{derive_series_seed, rng_for, Dataset, DriftKind, DriftMeta, Stream, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_series: usize,
    pub series_length: usize,
    pub train_len: usize,
    #[serde(default = "default_coeffs")]
    pub ar_coeffs: Vec<f64>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    pub drift_kind: DriftKind,
}

fn default_coeffs() -> Vec<f64> {
    vec![0.5, -0.3, 0.2]
}

fn default_noise_sd() -> f64 {
    1.0
}

fn default_burn_in() -> usize {
    200
}

fn default_seed() -> u64 {
    1000
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_series: 2000,
            series_length: 2000,
            train_len: 1650,
            ar_coeffs: default_coeffs(),
            noise_sd: default_noise_sd(),
            burn_in: default_burn_in(),
            base_seed: default_seed(),
            drift_kind: DriftKind::Sudden,
        }
    }
}

/// Smallest series length for which every drift-parameter range is non-empty.
pub const MIN_SERIES_LENGTH: usize = 20;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 {
            return Err(Error::InvalidInput("n_series must be positive".into()));
        }
        if self.series_length < MIN_SERIES_LENGTH {
            return Err(Error::InvalidInput(format!(
                "series_length must be at least {MIN_SERIES_LENGTH}, got {}",
                self.series_length
            )));
        }
        if self.train_len == 0 || self.train_len >= self.series_length {
            return Err(Error::InvalidInput(format!(
                "train_len {} must lie in 1..{}",
                self.train_len, self.series_length
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::InvalidInput(format!("noise_sd must be positive, got {}", self.noise_sd)));
        }
        if self.drift_kind == DriftKind::None {
            return Err(Error::InvalidInput("drift_kind must be sudden, incremental or gradual".into()));
        }
        check_stationary(&self.ar_coeffs)
    }
}

/// Whether all roots of `1 - φ1 z - ... - φp z^p` lie outside the unit circle.
///
/// Runs the Levinson step-down recursion; the process is stationary iff every
/// reflection coefficient has modulus below one.
pub fn is_stationary(coeffs: &[f64]) -> bool {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let mut a = coeffs.to_vec();
    while let Some(&kappa) = a.last() {
        if kappa.abs() >= 1.0 {
            return false;
        }
        let k = a.len();
        let denom = 1.0 - kappa * kappa;
        let next: Vec<f64> = (0..k - 1).map(|j| (a[j] + kappa * a[k - 2 - j]) / denom).collect();
        a = next;
    }
    true
}

fn check_stationary(coeffs: &[f64]) -> Result<()> {
    if coeffs.is_empty() {
        return Err(Error::InvalidInput("AR order must be at least 1".into()));
    }
    if is_stationary(coeffs) {
        Ok(())
    } else {
        Err(Error::NonStationary(coeffs.to_vec()))
    }
}

/// A stationary AR(p) process with Gaussian innovations.
#[derive(Debug, Clone, PartialEq)]
pub struct ArProcess {
    /// `φ1..φp`; `φ1` multiplies the most recent value.
    pub coeffs: Vec<f64>,
    pub noise_sd: f64,
    /// The `p` values preceding the first generated one, oldest first.
    pub initial: Vec<f64>,
    pub seed: u64,
    /// ChaCha stream of `seed` that drives the innovations.
    pub stream: u64,
}

/// Generates `n` values of `proc` after discarding `burn_in` warm-up values.
pub fn gen_ar(proc: &ArProcess, n: usize, burn_in: usize) -> Result<Vec<f64>> {
    check_stationary(&proc.coeffs)?;
    let p = proc.coeffs.len();
    if proc.initial.len() != p {
        return Err(Error::LengthMismatch { left: proc.initial.len(), right: p });
    }
    if !(proc.noise_sd.is_finite() && proc.noise_sd > 0.0) {
        return Err(Error::InvalidInput(format!("noise_sd must be positive, got {}", proc.noise_sd)));
    }
    let mut rng = rng_for(proc.seed, proc.stream);
    let mut x = Vec::with_capacity(p + burn_in + n);
    x.extend_from_slice(&proc.initial);
    for _ in 0..burn_in + n {
        let t = x.len();
        let ar: f64 = proc.coeffs.iter().enumerate().map(|(k, phi)| phi * x[t - 1 - k]).sum();
        let eps: f64 = rng.sample(StandardNormal);
        x.push(ar + proc.noise_sd * eps);
    }
    Ok(x.split_off(p + burn_in))
}

fn check_pair(ts1: &[f64], ts2: &[f64]) -> Result<usize> {
    if ts1.len() != ts2.len() {
        return Err(Error::LengthMismatch { left: ts1.len(), right: ts2.len() });
    }
    if ts1.is_empty() {
        return Err(Error::InvalidInput("cannot combine empty series".into()));
    }
    Ok(ts1.len())
}

/// `ts1` before `t_drift`, `ts2` on and after it (1-based).
pub fn combine_sudden(ts1: &[f64], ts2: &[f64], t_drift: usize) -> Result<Vec<f64>> {
    let len = check_pair(ts1, ts2)?;
    if t_drift == 0 || t_drift > len {
        return Err(Error::IndexOutOfRange { index: t_drift, len });
    }
    Ok(ts1[..t_drift - 1].iter().chain(&ts2[t_drift - 1..]).copied().collect())
}

/// Linear blend from `ts1` to `ts2` over `t_start..=t_end` (1-based).
///
/// The blend weight on `ts2` is `(i - t_start) / (t_end - t_start)`, so it
/// reads 0 at `t_start` and 1 at `t_end`.
pub fn combine_incremental(ts1: &[f64], ts2: &[f64], t_start: usize, t_end: usize) -> Result<Vec<f64>> {
    let len = check_pair(ts1, ts2)?;
    for idx in [t_start, t_end] {
        if idx == 0 || idx > len {
            return Err(Error::IndexOutOfRange { index: idx, len });
        }
    }
    if t_start >= t_end {
        return Err(Error::InvalidInput(format!("t_start {t_start} must precede t_end {t_end}")));
    }
    let span = (t_end - t_start) as f64;
    Ok((1..=len)
        .map(|i| {
            let (a, b) = (ts1[i - 1], ts2[i - 1]);
            if i < t_start {
                a
            } else if i >= t_end {
                b
            } else {
                let w = (i - t_start) as f64 / span;
                (1.0 - w) * a + w * b
            }
        })
        .collect())
}

/// Position `i` (1-based) takes `ts2[i]` with probability `i / L`.
///
/// One uniform draw per index, consumed in index order from the
/// [`Stream::Membership`] stream of `seed`.
pub fn combine_gradual(ts1: &[f64], ts2: &[f64], seed: u64) -> Result<Vec<f64>> {
    let len = check_pair(ts1, ts2)?;
    let mut rng = rng_for(seed, Stream::Membership as u64);
    let l = len as f64;
    Ok((1..=len)
        .map(|i| {
            let u: f64 = rng.random();
            if u < i as f64 / l {
                ts2[i - 1]
            } else {
                ts1[i - 1]
            }
        })
        .collect())
}

fn uniform_inclusive(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi.max(lo))
}

/// The two undrifted AR trajectories `(ts1, ts2)` behind series `ordinal` (0-based).
pub fn source_pair(cfg: &SimConfig, ordinal: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let seed = derive_series_seed(cfg.base_seed, ordinal as u64);
    let p = cfg.ar_coeffs.len();
    let len = cfg.series_length;

    let mut init_rng = rng_for(seed, Stream::SecondInit as u64);
    let init2: Vec<f64> = (0..p).map(|_| cfg.noise_sd * init_rng.sample::<f64, _>(StandardNormal)).collect();
    let first = ArProcess {
        coeffs: cfg.ar_coeffs.clone(),
        noise_sd: cfg.noise_sd,
        initial: vec![0.0; p],
        seed,
        stream: Stream::First as u64,
    };
    let second = ArProcess { initial: init2, stream: Stream::Second as u64, ..first.clone() };
    Ok((gen_ar(&first, len, cfg.burn_in)?, gen_ar(&second, len, cfg.burn_in)?))
}

fn build_series(cfg: &SimConfig, ordinal: usize) -> Result<TimeSeries> {
    let seed = derive_series_seed(cfg.base_seed, ordinal as u64);
    let len = cfg.series_length;
    let (ts1, ts2) = source_pair(cfg, ordinal)?;

    let mut param_rng = rng_for(seed, Stream::DriftParams as u64);
    let (values, drift) = match cfg.drift_kind {
        DriftKind::Sudden => {
            // ceil(0.1 L) ..= floor(0.95 L)
            let t = uniform_inclusive(&mut param_rng, len.div_ceil(10), 95 * len / 100);
            (combine_sudden(&ts1, &ts2, t)?, DriftMeta::sudden(t, seed))
        }
        DriftKind::Incremental => {
            // start in ceil(0.1 L) ..= floor(0.7 L), length in ceil(0.05 L) ..= floor(0.25 L)
            let start = uniform_inclusive(&mut param_rng, len.div_ceil(10), 7 * len / 10);
            let width = uniform_inclusive(&mut param_rng, len.div_ceil(20), len / 4);
            let end = start + width;
            (combine_incremental(&ts1, &ts2, start, end)?, DriftMeta::incremental(start, end, seed))
        }
        DriftKind::Gradual => (combine_gradual(&ts1, &ts2, seed)?, DriftMeta::gradual(seed)),
        DriftKind::None => unreachable!("rejected by SimConfig::validate"),
    };
    let id = format!("{}_{:05}", cfg.drift_kind, ordinal + 1);
    TimeSeries::new(id, values, cfg.train_len, drift)
}

/// Generates the dataset described by `cfg`. Deterministic; series are
/// produced in parallel but ordered by ordinal.
pub fn make_dataset(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let series = (0..cfg.n_series).into_par_iter().map(|s| build_series(cfg, s)).collect::<Result<Vec<_>>>()?;
    Dataset::new(cfg.drift_kind.as_str(), series, cfg.clone())
}
