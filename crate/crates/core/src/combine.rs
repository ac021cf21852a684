//! Online combination of the `M_partial` and `M_all` forecasts.
//!
//! A [`CombinerState`] is a small value-semantics state machine. Each step
//! alternates a prediction ([`CombinerState::step`]) with the realised value
//! ([`CombinerState::observe`]); the weights for step `i` are computed from
//! the errors made at step `i - 1`. The first step always returns the
//! `M_all` forecast.
//!
//! * ECW: `w_p = ε_a / (ε_p + ε_a)`, `w_a = ε_p / (ε_p + ε_a)` where `ε_p`,
//!   `ε_a` are the squared errors of the sub-models at the previous step.
//!   When both are zero the weights fall back to 0.5 / 0.5.
//! * GDW: weights start at 0.5 / 0.5; with `ε` the squared error of the
//!   previous combined forecast, `w_p -= η·(-2·ŷ_partial·ε)` and
//!   `w_a -= η·(-2·ŷ_all·ε)` using the previous sub-forecasts. Weights are
//!   not clamped unless [`GdwConfig::clamp`] is set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weighting::WeightMethod;

/// Squared error of a single forecast.
pub fn rss_point(y: f64, y_hat: f64) -> f64 {
    let r = y - y_hat;
    r * r
}

pub const DEFAULT_ETA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdwConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Clamp both weights to `[0, 1]` and renormalise to sum 1 after every update.
    #[serde(default)]
    pub clamp: bool,
    /// Use the residual `y - ŷ` in place of the squared error in the gradient.
    #[serde(default)]
    pub true_gradient: bool,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

impl Default for GdwConfig {
    fn default() -> Self {
        GdwConfig { eta: DEFAULT_ETA, clamp: false, true_gradient: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CombinerRule {
    Ecw,
    Gdw(GdwConfig),
}

impl CombinerRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            CombinerRule::Ecw => Ok(()),
            CombinerRule::Gdw(cfg) if cfg.eta.is_finite() && cfg.eta >= 0.0 => Ok(()),
            CombinerRule::Gdw(cfg) => Err(Error::InvalidInput(format!("eta must be >= 0, got {}", cfg.eta))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinerState {
    pub rule: CombinerRule,
    /// 1-based index of the next prediction.
    pub step: usize,
    pub w_partial: f64,
    pub w_all: f64,
    pub prev_actual: Option<f64>,
    pub prev_pred_partial: Option<f64>,
    pub prev_pred_all: Option<f64>,
    pub prev_pred_combined: Option<f64>,
    awaiting_actual: bool,
}

impl CombinerState {
    pub fn new(rule: CombinerRule) -> Self {
        CombinerState {
            rule,
            step: 1,
            w_partial: 0.5,
            w_all: 0.5,
            prev_actual: None,
            prev_pred_partial: None,
            prev_pred_all: None,
            prev_pred_combined: None,
            awaiting_actual: false,
        }
    }

    pub fn ecw() -> Self {
        Self::new(CombinerRule::Ecw)
    }

    pub fn gdw(cfg: GdwConfig) -> Self {
        Self::new(CombinerRule::Gdw(cfg))
    }

    /// Whether a prediction was made that still waits for its actual.
    pub fn awaiting_actual(&self) -> bool {
        self.awaiting_actual
    }

    /// Combined forecast for the current step and the advanced state.
    pub fn step(&self, y_partial: f64, y_all: f64) -> Result<(f64, CombinerState)> {
        match self.rule {
            CombinerRule::Ecw => ecw_step(self, y_partial, y_all),
            CombinerRule::Gdw(_) => gdw_step(self, y_partial, y_all),
        }
    }

    /// Records the realised value for the step just predicted.
    pub fn observe(&self, actual: f64) -> Result<CombinerState> {
        observe(self, actual)
    }

    fn previous(&self) -> Result<(f64, f64, f64, f64)> {
        match (self.prev_actual, self.prev_pred_partial, self.prev_pred_all, self.prev_pred_combined) {
            (Some(y), Some(p), Some(a), Some(c)) => Ok((y, p, a, c)),
            _ => Err(Error::Protocol("state past step 1 is missing its previous step")),
        }
    }

    fn record(&self, y_partial: f64, y_all: f64, combined: f64, w_partial: f64, w_all: f64) -> CombinerState {
        CombinerState {
            w_partial,
            w_all,
            prev_pred_partial: Some(y_partial),
            prev_pred_all: Some(y_all),
            prev_pred_combined: Some(combined),
            awaiting_actual: true,
            ..*self
        }
    }

    fn begin(&self) -> Result<()> {
        if self.awaiting_actual {
            return Err(Error::Protocol("prediction made twice without observing the actual"));
        }
        if self.step == 0 {
            return Err(Error::Protocol("step index must start at 1"));
        }
        Ok(())
    }
}

/// Error contribution weighting step.
pub fn ecw_step(state: &CombinerState, y_partial: f64, y_all: f64) -> Result<(f64, CombinerState)> {
    state.begin()?;
    if state.step == 1 {
        return Ok((y_all, state.record(y_partial, y_all, y_all, state.w_partial, state.w_all)));
    }
    let (y, prev_p, prev_a, _) = state.previous()?;
    let eps_p = rss_point(y, prev_p);
    let eps_a = rss_point(y, prev_a);
    let total = eps_p + eps_a;
    let (w_p, w_a) = if total > 0.0 { (eps_a / total, eps_p / total) } else { (0.5, 0.5) };
    let prediction = w_p * y_partial + w_a * y_all;
    Ok((prediction, state.record(y_partial, y_all, prediction, w_p, w_a)))
}

/// Gradient descent weighting step.
pub fn gdw_step(state: &CombinerState, y_partial: f64, y_all: f64) -> Result<(f64, CombinerState)> {
    let CombinerRule::Gdw(cfg) = state.rule else {
        return Err(Error::InvalidInput("gdw_step on a non-GDW state".into()));
    };
    state.begin()?;
    if state.step == 1 {
        return Ok((y_all, state.record(y_partial, y_all, y_all, state.w_partial, state.w_all)));
    }
    let (y, prev_p, prev_a, prev_c) = state.previous()?;
    let err = if cfg.true_gradient { y - prev_c } else { rss_point(y, prev_c) };
    let g_p = -2.0 * prev_p * err;
    let g_a = -2.0 * prev_a * err;
    let mut w_p = state.w_partial - g_p * cfg.eta;
    let mut w_a = state.w_all - g_a * cfg.eta;
    if cfg.clamp {
        w_p = w_p.clamp(0.0, 1.0);
        w_a = w_a.clamp(0.0, 1.0);
        let sum = w_p + w_a;
        (w_p, w_a) = if sum > 0.0 { (w_p / sum, w_a / sum) } else { (0.5, 0.5) };
    }
    let prediction = w_p * y_partial + w_a * y_all;
    Ok((prediction, state.record(y_partial, y_all, prediction, w_p, w_a)))
}

pub fn observe(state: &CombinerState, actual: f64) -> Result<CombinerState> {
    if !state.awaiting_actual {
        return Err(Error::Protocol("observe called without a pending prediction"));
    }
    Ok(CombinerState { prev_actual: Some(actual), step: state.step + 1, awaiting_actual: false, ..*state })
}

/// One `(partial, all)` pairing of sub-model weighting methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pairing {
    pub partial: WeightMethod,
    pub all: WeightMethod,
}

impl Pairing {
    pub fn label(&self) -> String {
        format!("{}-{}", self.partial.as_str(), self.all.as_str())
    }
}

/// `{exponential, linear}` for `M_partial` crossed with the same for `M_all`.
pub fn four_pairings() -> Vec<Pairing> {
    use WeightMethod::{Exponential, Linear};
    let mut out = Vec::with_capacity(4);
    for partial in [Exponential, Linear] {
        for all in [Exponential, Linear] {
            out.push(Pairing { partial, all });
        }
    }
    out
}

/// One combiner per pairing; the ensemble forecast is their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingEnsemble {
    pairings: Vec<Pairing>,
    states: Vec<CombinerState>,
}

impl PairingEnsemble {
    pub fn new(rule: CombinerRule, pairings: Vec<Pairing>) -> Result<Self> {
        if pairings.is_empty() {
            return Err(Error::InvalidInput("ensemble needs at least one pairing".into()));
        }
        rule.validate()?;
        let states = vec![CombinerState::new(rule); pairings.len()];
        Ok(PairingEnsemble { pairings, states })
    }

    pub fn pairings(&self) -> &[Pairing] {
        &self.pairings
    }

    pub fn states(&self) -> &[CombinerState] {
        &self.states
    }

    /// Steps every pairing with its `(y_partial, y_all)` and returns the mean
    /// combined forecast together with the per-pairing forecasts.
    pub fn forecast(&mut self, sub_predictions: &[(f64, f64)]) -> Result<(f64, Vec<f64>)> {
        if sub_predictions.len() != self.states.len() {
            return Err(Error::LengthMismatch { left: sub_predictions.len(), right: self.states.len() });
        }
        let mut next = Vec::with_capacity(self.states.len());
        let mut preds = Vec::with_capacity(self.states.len());
        for (state, &(yp, ya)) in self.states.iter().zip(sub_predictions) {
            let (pred, s) = state.step(yp, ya)?;
            preds.push(pred);
            next.push(s);
        }
        self.states = next;
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        Ok((mean, preds))
    }

    pub fn observe(&mut self, actual: f64) -> Result<()> {
        let next = self.states.iter().map(|s| s.observe(actual)).collect::<Result<Vec<_>>>()?;
        self.states = next;
        Ok(())
    }
}

/// Arithmetic mean of the pairing forecasts; steps `ensemble` in place.
pub fn ensemble_forecast(ensemble: &mut PairingEnsemble, sub_predictions: &[(f64, f64)]) -> Result<f64> {
    ensemble.forecast(sub_predictions).map(|(mean, _)| mean)
}

/// One row of a weight-dynamics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerTraceRow {
    pub series_id: String,
    pub t: usize,
    pub y: f64,
    pub yhat_partial: f64,
    pub yhat_all: f64,
    pub w_p: f64,
    pub w_a: f64,
    pub yhat_combined: f64,
}

/// Runs `rule` over a stream of `(t, y_partial, y_all, actual)` and records
/// the weights used at every step.
pub fn trace_combiner(
    rule: CombinerRule,
    series_id: &str,
    stream: impl IntoIterator<Item = (usize, f64, f64, f64)>,
) -> Result<Vec<CombinerTraceRow>> {
    let mut state = CombinerState::new(rule);
    let mut rows = Vec::new();
    for (t, yp, ya, y) in stream {
        let (pred, next) = state.step(yp, ya)?;
        rows.push(CombinerTraceRow {
            series_id: series_id.to_owned(),
            t,
            y,
            yhat_partial: yp,
            yhat_all: ya,
            w_p: next.w_partial,
            w_a: next.w_all,
            yhat_combined: pred,
        });
        state = next.observe(y)?;
    }
    Ok(rows)
}

/// Writes trace rows as CSV `series_id,t,y,yhat_partial,yhat_all,w_p,w_a,yhat_combined`.
pub fn write_combiner_trace<W: Write>(out: W, rows: &[CombinerTraceRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn primed(rule: CombinerRule, y: f64, yp: f64, ya: f64, yc: f64) -> CombinerState {
        CombinerState {
            step: 2,
            prev_actual: Some(y),
            prev_pred_partial: Some(yp),
            prev_pred_all: Some(ya),
            prev_pred_combined: Some(yc),
            ..CombinerState::new(rule)
        }
    }

    #[test]
    fn rss_examples() {
        assert_eq!(rss_point(3.0, 3.0), 0.0);
        assert_eq!(rss_point(2.0, 0.0), 4.0);
        assert_eq!(rss_point(-1.0, 1.0), 4.0);
    }

    #[test]
    fn first_step_returns_all_model() {
        let (p, s) = CombinerState::ecw().step(10.0, 2.0).unwrap();
        assert_eq!(p, 2.0);
        let (p, s2) = CombinerState::gdw(GdwConfig::default()).step(10.0, 2.0).unwrap();
        assert_eq!(p, 2.0);
        assert_eq!((s2.w_partial, s2.w_all), (0.5, 0.5));
        assert!(s.awaiting_actual());
    }

    #[test]
    fn ecw_arithmetic() {
        // ε_p = 1, ε_a = 3
        let s = primed(CombinerRule::Ecw, 0.0, 1.0, 3f64.sqrt(), 0.0);
        let (p, next) = s.step(10.0, 2.0).unwrap();
        assert!((next.w_partial - 0.75).abs() < 1e-15);
        assert!((next.w_all - 0.25).abs() < 1e-15);
        assert!((p - 8.0).abs() < 1e-12);
    }

    #[test]
    fn ecw_equal_and_zero_errors() {
        let s = primed(CombinerRule::Ecw, 1.0, 0.0, 2.0, 0.0);
        let (p, next) = s.step(4.0, 6.0).unwrap();
        assert_eq!((next.w_partial, next.w_all), (0.5, 0.5));
        assert_eq!(p, 5.0);
        let s = primed(CombinerRule::Ecw, 1.0, 1.0, 1.0, 1.0);
        let (_, next) = s.step(4.0, 6.0).unwrap();
        assert_eq!((next.w_partial, next.w_all), (0.5, 0.5));
    }

    #[test]
    fn gdw_arithmetic() {
        let rule = CombinerRule::Gdw(GdwConfig::default());
        let s = primed(rule, 2.0, 1.0, 1.0, 1.0);
        let (p, next) = s.step(1.0, 1.0).unwrap();
        assert!((next.w_partial - 0.52).abs() < 1e-15);
        assert!((next.w_all - 0.52).abs() < 1e-15);
        assert!((p - 1.04).abs() < 1e-15);
    }

    #[test]
    fn gdw_zero_error_freezes_weights() {
        let rule = CombinerRule::Gdw(GdwConfig::default());
        let s = CombinerState { w_partial: 0.3, w_all: 0.9, ..primed(rule, 1.5, 7.0, -2.0, 1.5) };
        let (_, next) = s.step(1.0, 1.0).unwrap();
        assert_eq!((next.w_partial, next.w_all), (0.3, 0.9));
    }

    #[test]
    fn gdw_clamp_renormalises() {
        let rule = CombinerRule::Gdw(GdwConfig { eta: 1.0, clamp: true, true_gradient: false });
        let s = primed(rule, 3.0, 1.0, -1.0, 1.0);
        let (_, next) = s.step(1.0, 1.0).unwrap();
        assert_eq!((next.w_partial, next.w_all), (1.0, 0.0));
    }

    #[test]
    fn gdw_true_gradient_uses_residual() {
        let rule = CombinerRule::Gdw(GdwConfig { eta: 0.1, clamp: false, true_gradient: true });
        // residual = -2, g_p = -2·1·(-2) = 4, g_a = -2·3·(-2) = 12
        let s = primed(rule, 0.0, 1.0, 3.0, 2.0);
        let (_, next) = s.step(0.0, 0.0).unwrap();
        assert!((next.w_partial - 0.1).abs() < 1e-15);
        assert!((next.w_all - (0.5 - 1.2)).abs() < 1e-15);
    }

    #[test]
    fn protocol_violations() {
        let s = CombinerState::ecw();
        assert!(s.observe(1.0).is_err());
        let (_, pending) = s.step(1.0, 2.0).unwrap();
        assert!(pending.step(1.0, 2.0).is_err());
        let observed = pending.observe(5.0).unwrap();
        assert_eq!(observed.step, 2);
        assert_eq!(observed.prev_actual, Some(5.0));
        assert!(observed.observe(5.0).is_err());
    }

    #[test]
    fn observe_feeds_next_error() {
        let (_, s) = CombinerState::ecw().step(0.0, 4.0).unwrap();
        let s = s.observe(1.0).unwrap();
        // ε_p = 1, ε_a = 9 → w_p = 0.9
        let (_, next) = s.step(0.0, 0.0).unwrap();
        assert!((next.w_partial - 0.9).abs() < 1e-15);
    }

    #[test]
    fn ensemble_mean_and_mismatch() {
        let mut e = PairingEnsemble::new(CombinerRule::Ecw, four_pairings()).unwrap();
        assert!(ensemble_forecast(&mut e, &[(1.0, 1.0)]).is_err());
        // step 1 returns y_all of each pairing
        let v = ensemble_forecast(&mut e, &[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (0.0, 4.0)]).unwrap();
        assert_eq!(v, 2.5);
        e.observe(0.0).unwrap();
        let v = ensemble_forecast(&mut e, &[(7.0, 7.0); 4]).unwrap();
        assert_eq!(v, 7.0);
    }

    #[test]
    fn single_pairing_matches_combiner() {
        let rule = CombinerRule::Gdw(GdwConfig::default());
        let mut e = PairingEnsemble::new(rule, vec![four_pairings()[0]]).unwrap();
        let mut s = CombinerState::new(rule);
        for (i, (yp, ya, y)) in
            [(1.0, 2.0, 1.5), (0.3, -0.2, 0.1), (2.0, 1.0, 3.0), (0.5, 0.7, 0.6)].into_iter().enumerate()
        {
            let (p, next) = s.step(yp, ya).unwrap();
            let q = ensemble_forecast(&mut e, &[(yp, ya)]).unwrap();
            assert_eq!(p, q, "step {i}");
            s = next.observe(y).unwrap();
            e.observe(y).unwrap();
        }
    }

    #[test]
    fn four_pairings_are_the_cross_product() {
        let p = four_pairings();
        assert_eq!(p.len(), 4);
        let labels: Vec<String> = p.iter().map(Pairing::label).collect();
        assert_eq!(labels, ["exponential-exponential", "exponential-linear", "linear-exponential", "linear-linear"]);
    }

    #[test]
    fn trace_rows_carry_weights() {
        let rows = trace_combiner(CombinerRule::Ecw, "s1", [(1, 0.0, 4.0, 1.0), (2, 0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].yhat_combined, 4.0);
        assert!((rows[1].w_p - 0.9).abs() < 1e-15);
        let mut buf = Vec::new();
        write_combiner_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("series_id,t,y,yhat_partial,yhat_all,w_p,w_a,yhat_combined\n"));
    }
}
