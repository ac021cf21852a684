//! Base forecasting models.
//!
//! * `global_ar`: one autoregressive model pooled over every series, fitted
//!   by weighted ridge least squares with an unpenalised intercept. Rows
//!   never straddle two series. This is the global forecasting model that the
//!   combiners in [`crate::combine`] operate on.
//! * `local_ar`: per-series AR(p) with intercept, ordinary least squares.
//! * `ets`: per-series level-only exponential smoothing with the smoothing
//!   parameter picked from a grid by in-sample one-step SSE.
//!
//! All models produce one-step-ahead forecasts only; the evaluation harness
//! composes them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Dataset;
use crate::weighting::{weight_schedule, WeightingScheme};

/// Training window of a learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    All,
    /// The most recent `n` observations.
    Last(usize),
}

impl Window {
    /// 0-based index where the window starts in a prefix of length `n`.
    pub fn start(self, n: usize) -> usize {
        match self {
            Window::All => 0,
            Window::Last(w) => n.saturating_sub(w),
        }
    }

    pub fn label(self) -> String {
        match self {
            Window::All => "All".into(),
            Window::Last(w) => w.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GlobalAr,
    LocalAr,
    Ets,
}

pub const DEFAULT_GLOBAL_LAGS: usize = 10;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub family: Family,
    /// Lag count (global_ar) or AR order (local_ar); ignored by ets.
    #[serde(default = "default_order")]
    pub order: usize,
    pub window: Window,
    #[serde(default)]
    pub weighting: WeightingScheme,
    /// Ridge penalty on the lag coefficients (global_ar only).
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    /// Scale each training row (target and lags) by its weight instead of
    /// using the weight in the loss.
    #[serde(default)]
    pub literal_value_scaling: bool,
}

fn default_order() -> usize {
    DEFAULT_GLOBAL_LAGS
}

fn default_lambda() -> f64 {
    DEFAULT_RIDGE_LAMBDA
}

impl LearnerSpec {
    pub fn global_ar(order: usize, window: Window, weighting: WeightingScheme, ridge_lambda: f64) -> Self {
        LearnerSpec { family: Family::GlobalAr, order, window, weighting, ridge_lambda, literal_value_scaling: false }
    }

    pub fn local_ar(order: usize, window: Window) -> Self {
        LearnerSpec {
            family: Family::LocalAr,
            order,
            window,
            weighting: WeightingScheme::none(),
            ridge_lambda: 0.0,
            literal_value_scaling: false,
        }
    }

    pub fn ets(window: Window) -> Self {
        LearnerSpec {
            family: Family::Ets,
            order: 1,
            window,
            weighting: WeightingScheme::none(),
            ridge_lambda: 0.0,
            literal_value_scaling: false,
        }
    }

    pub fn is_global(&self) -> bool {
        self.family == Family::GlobalAr
    }

    /// Stable identity used to share fitted models between methods.
    pub fn key(&self) -> String {
        format!("{self:?}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidInput("learner order must be at least 1".into()));
        }
        if let Window::Last(0) = self.window {
            return Err(Error::InvalidInput("window length must be positive".into()));
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        self.weighting.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    /// `coeffs[k]` multiplies the value `k + 1` steps back.
    Ar {
        intercept: f64,
        coeffs: Vec<f64>,
    },
    Ets {
        alpha: f64,
        level: f64,
    },
}

/// A fitted base learner. Immutable after fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub spec: LearnerSpec,
    pub params: ModelParams,
    /// Number of observations (1-based index of the last one) seen in training.
    pub fitted_through: usize,
}

impl ForecastModel {
    pub fn predict_one(&self, history: &[f64]) -> Result<f64> {
        predict_one(self, history)
    }
}

/// One-step-ahead forecast of the value following `history`.
pub fn predict_one(model: &ForecastModel, history: &[f64]) -> Result<f64> {
    match &model.params {
        ModelParams::Ar { intercept, coeffs } => {
            let n = history.len();
            if n < coeffs.len() {
                return Err(Error::InsufficientData { needed: coeffs.len(), available: n });
            }
            Ok(intercept + coeffs.iter().enumerate().map(|(k, phi)| phi * history[n - 1 - k]).sum::<f64>())
        }
        ModelParams::Ets { alpha, level } => {
            if history.len() < model.fitted_through {
                return Err(Error::InsufficientData { needed: model.fitted_through, available: history.len() });
            }
            Ok(history[model.fitted_through..].iter().fold(*level, |l, y| alpha * y + (1.0 - alpha) * l))
        }
    }
}

/// Something that produces one-step forecasts from a history.
pub trait Forecaster: Send + Sync {
    fn predict_one(&self, history: &[f64]) -> Result<f64>;
}

impl Forecaster for ForecastModel {
    fn predict_one(&self, history: &[f64]) -> Result<f64> {
        predict_one(self, history)
    }
}

/// A trainable base learner. `training` holds the observed prefix of every
/// series the model may learn from; local learners take exactly one.
pub trait BaseLearner: Send + Sync {
    type Model: Forecaster;

    fn fit(&self, training: &[&[f64]]) -> Result<Self::Model>;
}

impl BaseLearner for LearnerSpec {
    type Model = ForecastModel;

    fn fit(&self, training: &[&[f64]]) -> Result<ForecastModel> {
        match self.family {
            Family::GlobalAr => fit_global_ar_on(training, self),
            Family::LocalAr | Family::Ets => {
                let [series] = training else {
                    return Err(Error::InvalidInput(format!(
                        "local learners fit one series at a time, got {}",
                        training.len()
                    )));
                };
                if self.family == Family::LocalAr {
                    fit_local_ar(series, self.order, self.window)
                } else {
                    fit_ets(series, self.window)
                }
            }
        }
    }
}

/// Fits the pooled ridge AR on the first `train_through` observations of
/// every series in `dataset`.
pub fn fit_global_ar(dataset: &Dataset, train_through: usize, spec: &LearnerSpec) -> Result<ForecastModel> {
    let prefixes: Vec<&[f64]> = dataset.series().iter().map(|s| s.prefix(train_through)).collect();
    fit_global_ar_on(&prefixes, spec)
}

/// Normal-equation blocks `(XᵀWX, XᵀWy)` of one series, row-major `d×d`.
fn series_normal_equations(y: &[f64], spec: &LearnerSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = spec.order;
    let d = p + 1;
    let n = y.len();
    let first_target = spec.window.start(n).max(p);
    if first_target >= n {
        return Err(Error::InsufficientData { needed: p + 1, available: n });
    }
    let rows = n - first_target;
    let weights = weight_schedule(&spec.weighting, rows)?;

    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    let mut x = vec![0.0; d];
    for (r, t) in (first_target..n).enumerate() {
        let w = weights.as_slice()[r];
        let (row_w, scale) = if spec.literal_value_scaling { (1.0, w) } else { (w, 1.0) };
        x[0] = 1.0;
        for k in 1..=p {
            x[k] = scale * y[t - k];
        }
        let target = scale * y[t];
        for i in 0..d {
            let wx = row_w * x[i];
            xty[i] += wx * target;
            for j in i..d {
                xtx[i * d + j] += wx * x[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            xtx[i * d + j] = xtx[j * d + i];
        }
    }
    Ok((xtx, xty))
}

/// Weighted ridge fit of the pooled AR model over `prefixes`.
///
/// Minimises `Σ w_i (y_i - c - φ·x_i)² + λ‖φ‖²`, rows restricted to targets
/// inside each series' window, with the row weights produced by the spec's
/// recency schedule over that series' rows.
pub fn fit_global_ar_on(prefixes: &[&[f64]], spec: &LearnerSpec) -> Result<ForecastModel> {
    if spec.family != Family::GlobalAr {
        return Err(Error::InvalidInput("fit_global_ar_on requires a global_ar spec".into()));
    }
    spec.validate()?;
    if prefixes.is_empty() {
        return Err(Error::InvalidInput("no series to fit".into()));
    }
    let d = spec.order + 1;
    // per-series blocks are reduced sequentially in series order so the
    // result does not depend on the worker count
    let blocks = prefixes.par_iter().map(|y| series_normal_equations(y, spec)).collect::<Result<Vec<_>>>()?;
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for (a, b) in &blocks {
        xtx.iter_mut().zip(a).for_each(|(acc, v)| *acc += v);
        xty.iter_mut().zip(b).for_each(|(acc, v)| *acc += v);
    }
    for i in 1..d {
        xtx[i * d + i] += spec.ridge_lambda;
    }
    let beta = solve_spd(DMatrix::from_row_slice(d, d, &xtx), DVector::from_vec(xty))?;
    Ok(ForecastModel {
        spec: *spec,
        params: ModelParams::Ar { intercept: beta[0], coeffs: beta.iter().skip(1).copied().collect() },
        fitted_through: prefixes.iter().map(|p| p.len()).max().unwrap_or(0),
    })
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let solution = match a.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => a.lu().solve(&b).ok_or_else(|| Error::FitFailed("singular normal equations".into()))?,
    };
    if solution.iter().all(|v| v.is_finite()) {
        Ok(solution)
    } else {
        Err(Error::FitFailed("non-finite coefficients".into()))
    }
}

/// OLS AR(p) with intercept on the window of a single series.
///
/// Rank-deficient designs (e.g. a constant series) give the minimum-norm
/// solution.
pub fn fit_local_ar(series: &[f64], p: usize, window: Window) -> Result<ForecastModel> {
    let spec = LearnerSpec::local_ar(p, window);
    spec.validate()?;
    let data = &series[window.start(series.len())..];
    let needed = 2 * p + 2;
    if data.len() < needed {
        return Err(Error::InsufficientData { needed, available: data.len() });
    }
    let rows = data.len() - p;
    let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { data[r + p - c] });
    let target = DVector::from_iterator(rows, data[p..].iter().copied());
    let beta = min_norm_least_squares(&design, &target);
    if !beta.iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailed("non-finite coefficients".into()));
    }
    Ok(ForecastModel {
        spec,
        params: ModelParams::Ar { intercept: beta[0], coeffs: beta.iter().skip(1).copied().collect() },
        fitted_through: series.len(),
    })
}

/// Minimum-norm least squares via the eigendecomposition of `XᵀX`, dropping
/// eigenvalues below `λ_max · 1e-12 · cols`. nalgebra's SVD mis-decomposes
/// exactly rank-deficient designs such as constant series.
fn min_norm_least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    let gram = design.transpose() * design;
    let eig = gram.symmetric_eigen();
    let tol = eig.eigenvalues.max() * 1e-12 * design.ncols() as f64;
    let projected = eig.eigenvectors.transpose() * (design.transpose() * target);
    let scaled = DVector::from_iterator(
        projected.len(),
        projected.iter().zip(eig.eigenvalues.iter()).map(|(v, l)| if *l > tol { v / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

/// Grid of candidate smoothing parameters: 0.01, 0.02, ..., 0.99.
pub fn ets_alpha_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|k| k as f64 / 100.0)
}

/// In-sample one-step SSE and final level of level-only smoothing.
pub fn ets_sse(data: &[f64], alpha: f64) -> (f64, f64) {
    let mut level = data[0];
    let mut sse = 0.0;
    for &y in &data[1..] {
        let e = y - level;
        sse += e * e;
        level = alpha * y + (1.0 - alpha) * level;
    }
    (sse, level)
}

/// Level-only exponential smoothing on the window of a single series.
pub fn fit_ets(series: &[f64], window: Window) -> Result<ForecastModel> {
    let spec = LearnerSpec::ets(window);
    spec.validate()?;
    let data = &series[window.start(series.len())..];
    if data.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, available: data.len() });
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for alpha in ets_alpha_grid() {
        let (sse, level) = ets_sse(data, alpha);
        if sse < best.0 {
            best = (sse, alpha, level);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::FitFailed("no finite SSE on the alpha grid".into()));
    }
    Ok(ForecastModel { spec, params: ModelParams::Ets { alpha: best.1, level: best.2 }, fitted_through: series.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar(intercept: f64, coeffs: Vec<f64>) -> ForecastModel {
        ForecastModel {
            spec: LearnerSpec::local_ar(coeffs.len(), Window::All),
            params: ModelParams::Ar { intercept, coeffs },
            fitted_through: 0,
        }
    }

    #[test]
    fn ar_prediction_formula() {
        assert_eq!(ar(0.0, vec![0.5]).predict_one(&[1.0, 4.0]).unwrap(), 2.0);
        assert_eq!(ar(0.0, vec![1.0, 0.0, 0.0]).predict_one(&[3.0, 2.0, 7.5]).unwrap(), 7.5);
        assert!(ar(0.0, vec![1.0, 0.0, 0.0]).predict_one(&[3.0, 2.0]).is_err());
    }

    #[test]
    fn ets_identity_without_new_observations() {
        let m = ForecastModel {
            spec: LearnerSpec::ets(Window::All),
            params: ModelParams::Ets { alpha: 0.3, level: 1.25 },
            fitted_through: 4,
        };
        assert_eq!(m.predict_one(&[9.0, 9.0, 9.0, 9.0]).unwrap(), 1.25);
        assert!((m.predict_one(&[9.0, 9.0, 9.0, 9.0, 2.25]).unwrap() - (0.3 * 2.25 + 0.7 * 1.25)).abs() < 1e-15);
        assert!(m.predict_one(&[9.0]).is_err());
    }

    #[test]
    fn ets_constant_series() {
        let m = fit_ets(&[4.5; 30], Window::All).unwrap();
        assert_eq!(m.predict_one(&[4.5; 30]).unwrap(), 4.5);
        assert!(fit_ets(&[1.0, 2.0], Window::All).is_err());
    }

    #[test]
    fn ets_window_uses_recent_values() {
        let mut s = vec![100.0; 50];
        s.extend(vec![1.0; 10]);
        let m = fit_ets(&s, Window::Last(10)).unwrap();
        assert_eq!(m.predict_one(&s).unwrap(), 1.0);
    }

    #[test]
    fn local_ar_constant_series_predicts_constant() {
        let s = vec![3.0; 40];
        for p in [1, 3, 5] {
            let m = fit_local_ar(&s, p, Window::All).unwrap();
            assert!((m.predict_one(&s).unwrap() - 3.0).abs() < 1e-9);
            if let ModelParams::Ar { intercept, coeffs } = &m.params {
                let sum: f64 = coeffs.iter().sum();
                assert!((intercept - 3.0 * (1.0 - sum)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_ar_precondition() {
        assert!(matches!(
            fit_local_ar(&[1.0, 2.0], 1, Window::All),
            Err(Error::InsufficientData { needed: 4, available: 2 })
        ));
        let long: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!(fit_local_ar(&long, 3, Window::Last(7)).is_err());
        assert!(fit_local_ar(&long, 3, Window::Last(8)).is_ok());
    }

    #[test]
    fn global_requires_rows_for_every_series() {
        let spec = LearnerSpec::global_ar(3, Window::All, WeightingScheme::none(), 0.0);
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 2.0, 3.0];
        assert!(fit_global_ar_on(&[&a, &b], &spec).is_err());
    }

    #[test]
    fn base_learner_dispatch() {
        let s: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).cos()).collect();
        let spec = LearnerSpec::local_ar(2, Window::All);
        assert_eq!(spec.fit(&[&s]).unwrap(), fit_local_ar(&s, 2, Window::All).unwrap());
        assert!(spec.fit(&[&s, &s]).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let s: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).cos()).collect();
        let m = fit_ets(&s, Window::Last(20)).unwrap();
        let back: ForecastModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
