//! Prequential evaluation with increasing blocks.
//!
//! The test horizon of every series is cut into blocks. Before each block all
//! models are refitted on every observation before it; within the block each
//! method produces one-step-ahead forecasts, the forecast for position `t`
//! seeing true observations through `t - 1` only (rolling origin without
//! recalibration). Combiner states of the adaptive methods persist across
//! block boundaries.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{four_pairings, CombinerRule, CombinerTraceRow, Pairing, PairingEnsemble};
use crate::error::{Error, Result};
use crate::learners::{
    fit_global_ar_on, BaseLearner, Family, ForecastModel, LearnerSpec, Window, DEFAULT_GLOBAL_LAGS,
    DEFAULT_RIDGE_LAMBDA,
};
use crate::series::{Dataset, DriftKind};
use crate::weighting::{WeightMethod, WeightingScheme};

/// Settings shared by the `M_partial` / `M_all` global sub-models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubModelSpec {
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    #[serde(default = "default_rate")]
    pub alpha0: f64,
    #[serde(default = "default_rate")]
    pub beta: f64,
    /// Observations used by `M_partial`.
    #[serde(default = "default_partial_window")]
    pub partial_window: usize,
    #[serde(default)]
    pub literal_value_scaling: bool,
}

fn default_lags() -> usize {
    DEFAULT_GLOBAL_LAGS
}

fn default_lambda() -> f64 {
    DEFAULT_RIDGE_LAMBDA
}

fn default_rate() -> f64 {
    0.9
}

fn default_partial_window() -> usize {
    200
}

fn default_pairings() -> Vec<Pairing> {
    four_pairings()
}

impl Default for SubModelSpec {
    fn default() -> Self {
        SubModelSpec {
            lags: default_lags(),
            ridge_lambda: default_lambda(),
            alpha0: default_rate(),
            beta: default_rate(),
            partial_window: default_partial_window(),
            literal_value_scaling: false,
        }
    }
}

impl SubModelSpec {
    fn learner(&self, window: Window, method: WeightMethod) -> LearnerSpec {
        LearnerSpec {
            weighting: WeightingScheme { method, alpha0: self.alpha0, beta: self.beta },
            literal_value_scaling: self.literal_value_scaling,
            ..LearnerSpec::global_ar(self.lags, window, WeightingScheme::none(), self.ridge_lambda)
        }
    }

    pub fn partial(&self, method: WeightMethod) -> LearnerSpec {
        self.learner(Window::Last(self.partial_window), method)
    }

    pub fn all(&self, method: WeightMethod) -> LearnerSpec {
        self.learner(Window::All, method)
    }
}

/// A forecasting method under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// A single base learner forecasting directly.
    Benchmark { name: String, learner: LearnerSpec },
    /// ECW or GDW over `M_partial` / `M_all` pairings, averaged.
    Adaptive {
        name: String,
        combiner: CombinerRule,
        #[serde(default)]
        sub_model: SubModelSpec,
        #[serde(default = "default_pairings")]
        pairings: Vec<Pairing>,
    },
}

/// Report grouping of a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodGroup {
    Statistical,
    GfmBaseline,
    Proposed,
}

impl MethodGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodGroup::Statistical => "statistical",
            MethodGroup::GfmBaseline => "gfm_baseline",
            MethodGroup::Proposed => "proposed",
        }
    }
}

impl MethodSpec {
    pub fn name(&self) -> &str {
        match self {
            MethodSpec::Benchmark { name, .. } | MethodSpec::Adaptive { name, .. } => name,
        }
    }

    pub fn group(&self) -> MethodGroup {
        match self {
            MethodSpec::Benchmark { learner, .. } if learner.family == Family::GlobalAr => MethodGroup::GfmBaseline,
            MethodSpec::Benchmark { .. } => MethodGroup::Statistical,
            MethodSpec::Adaptive { .. } => MethodGroup::Proposed,
        }
    }

    pub fn ecw(name: impl Into<String>) -> Self {
        MethodSpec::Adaptive {
            name: name.into(),
            combiner: CombinerRule::Ecw,
            sub_model: SubModelSpec::default(),
            pairings: four_pairings(),
        }
    }

    pub fn gdw(name: impl Into<String>, cfg: crate::combine::GdwConfig) -> Self {
        MethodSpec::Adaptive {
            name: name.into(),
            combiner: CombinerRule::Gdw(cfg),
            sub_model: SubModelSpec::default(),
            pairings: four_pairings(),
        }
    }

    pub fn benchmark(name: impl Into<String>, learner: LearnerSpec) -> Self {
        MethodSpec::Benchmark { name: name.into(), learner }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Benchmark { learner, .. } => learner.validate(),
            MethodSpec::Adaptive { combiner, sub_model, pairings, .. } => {
                combiner.validate()?;
                if pairings.is_empty() {
                    return Err(Error::InvalidInput(format!("method `{}` has no pairings", self.name())));
                }
                for p in pairings {
                    sub_model.partial(p.partial).validate()?;
                    sub_model.all(p.all).validate()?;
                }
                Ok(())
            }
        }
    }
}

/// The benchmark matrix plus GDW and ECW, in report order.
pub fn standard_methods() -> Vec<MethodSpec> {
    let mut out = Vec::with_capacity(14);
    for (label, order) in [("AR3", 3), ("AR5", 5)] {
        for window in [Window::Last(200), Window::All] {
            out.push(MethodSpec::benchmark(
                format!("{label}_{}", window.label()),
                LearnerSpec::local_ar(order, window),
            ));
        }
    }
    for window in [Window::Last(200), Window::All] {
        out.push(MethodSpec::benchmark(format!("ETS_{}", window.label()), LearnerSpec::ets(window)));
    }
    for (label, method) in
        [("EXP", WeightMethod::Exponential), ("Linear", WeightMethod::Linear), ("Plain", WeightMethod::None)]
    {
        for window in [Window::Last(200), Window::All] {
            let spec = LearnerSpec::global_ar(
                DEFAULT_GLOBAL_LAGS,
                window,
                WeightingScheme::with_method(method),
                DEFAULT_RIDGE_LAMBDA,
            );
            out.push(MethodSpec::benchmark(format!("{label}_{}", window.label()), spec));
        }
    }
    out.push(MethodSpec::gdw("GDW", Default::default()));
    out.push(MethodSpec::ecw("ECW"));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon: usize,
    pub block_size: usize,
    #[serde(default = "standard_methods")]
    pub methods: Vec<MethodSpec>,
    /// Keep per-step combiner weights of every adaptive method.
    #[serde(default)]
    pub record_weights: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { horizon: 350, block_size: 50, methods: standard_methods(), record_weights: false }
    }
}

impl EvalConfig {
    pub fn blocks(&self) -> usize {
        self.horizon / self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.block_size == 0 || !self.horizon.is_multiple_of(self.block_size) {
            return Err(Error::InvalidInput(format!(
                "horizon {} must be a positive multiple of block_size {}",
                self.horizon, self.block_size
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods configured".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            if !seen.insert(m.name()) {
                return Err(Error::InvalidInput(format!("duplicate method name `{}`", m.name())));
            }
            m.validate()?;
        }
        Ok(())
    }
}

/// One-step forecasts of one method over the test horizon of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrace {
    pub series_id: String,
    pub method: String,
    /// 1-based position of the first forecast.
    pub start: usize,
    pub actuals: Vec<f64>,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub series_id: String,
    pub method: String,
    /// 1-based block index in which the method failed.
    pub block: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTraceRow {
    pub method: String,
    pub pairing: String,
    pub row: CombinerTraceRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialOutput {
    /// Ordered by method (config order), then series (dataset order).
    pub traces: Vec<ForecastTrace>,
    /// `refits[method][series]`: model refreshes that served that series.
    pub refits: Vec<Vec<usize>>,
    pub failures: Vec<FitFailure>,
    pub weights: Vec<WeightTraceRow>,
}

enum Plan {
    Single(usize),
    Pairs(Vec<(usize, usize)>),
}

impl Plan {
    fn learners(&self) -> Vec<usize> {
        match self {
            Plan::Single(l) => vec![*l],
            Plan::Pairs(pairs) => pairs.iter().flat_map(|&(a, b)| [a, b]).collect(),
        }
    }
}

struct SeriesRun {
    ensembles: Vec<Option<PairingEnsemble>>,
    predictions: Vec<Vec<f64>>,
    failed: Vec<Option<FitFailure>>,
    refits: Vec<usize>,
    weights: Vec<WeightTraceRow>,
}

fn intern(learners: &mut Vec<LearnerSpec>, index: &mut HashMap<String, usize>, spec: LearnerSpec) -> usize {
    *index.entry(spec.key()).or_insert_with(|| {
        learners.push(spec);
        learners.len() - 1
    })
}

/// Runs every configured method over the test horizon of every series.
///
/// Fit failures do not abort the run: the failing (series, method) pair is
/// dropped from the traces and reported in [`PrequentialOutput::failures`].
pub fn prequential_run(dataset: &Dataset, cfg: &EvalConfig) -> Result<PrequentialOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset has no series".into()));
    }
    let train_len = dataset.train_len();
    let needed = train_len + cfg.horizon;
    if dataset.series_length() < needed {
        return Err(Error::InsufficientData { needed, available: dataset.series_length() });
    }

    let mut learners = Vec::new();
    let mut index = HashMap::new();
    let plans: Vec<Plan> = cfg
        .methods
        .iter()
        .map(|m| match m {
            MethodSpec::Benchmark { learner, .. } => Plan::Single(intern(&mut learners, &mut index, *learner)),
            MethodSpec::Adaptive { sub_model, pairings, .. } => Plan::Pairs(
                pairings
                    .iter()
                    .map(|p| {
                        (
                            intern(&mut learners, &mut index, sub_model.partial(p.partial)),
                            intern(&mut learners, &mut index, sub_model.all(p.all)),
                        )
                    })
                    .collect(),
            ),
        })
        .collect();
    let plan_learners: Vec<Vec<usize>> = plans.iter().map(Plan::learners).collect();

    let n_methods = cfg.methods.len();
    let mut runs: Vec<SeriesRun> = dataset
        .series()
        .iter()
        .map(|_| -> Result<SeriesRun> {
            let ensembles = cfg
                .methods
                .iter()
                .map(|m| match m {
                    MethodSpec::Adaptive { combiner, pairings, .. } => {
                        PairingEnsemble::new(*combiner, pairings.clone()).map(Some)
                    }
                    MethodSpec::Benchmark { .. } => Ok(None),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SeriesRun {
                ensembles,
                predictions: vec![Vec::with_capacity(cfg.horizon); n_methods],
                failed: vec![None; n_methods],
                refits: vec![0; n_methods],
                weights: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;

    for block in 0..cfg.blocks() {
        let cutoff = train_len + block * cfg.block_size;
        let prefixes: Vec<&[f64]> = dataset.series().iter().map(|s| s.prefix(cutoff)).collect();
        let global: Vec<Option<std::result::Result<ForecastModel, String>>> = learners
            .iter()
            .map(|spec| spec.is_global().then(|| fit_global_ar_on(&prefixes, spec).map_err(|e| e.to_string())))
            .collect();

        runs.par_iter_mut().zip(dataset.series().par_iter()).try_for_each(|(run, series)| -> Result<()> {
            let values = series.values();
            let local: Vec<Option<std::result::Result<ForecastModel, String>>> = learners
                .iter()
                .map(|spec| (!spec.is_global()).then(|| spec.fit(&[&values[..cutoff]]).map_err(|e| e.to_string())))
                .collect();
            let models: Vec<std::result::Result<&ForecastModel, &str>> = global
                .iter()
                .zip(&local)
                .map(|(g, l)| match g.as_ref().or(l.as_ref()).expect("every learner is global or local") {
                    Ok(m) => Ok(m),
                    Err(e) => Err(e.as_str()),
                })
                .collect();

            for (mi, method) in cfg.methods.iter().enumerate() {
                if run.failed[mi].is_some() {
                    continue;
                }
                match plan_learners[mi].iter().find_map(|&l| models[l].err()) {
                    Some(msg) => {
                        run.failed[mi] = Some(FitFailure {
                            series_id: series.id().to_owned(),
                            method: method.name().to_owned(),
                            block: block + 1,
                            message: msg.to_owned(),
                        })
                    }
                    None => run.refits[mi] += 1,
                }
            }

            for t in cutoff..cutoff + cfg.block_size {
                let history = &values[..t];
                let actual = values[t];
                let mut cache: Vec<Option<std::result::Result<f64, String>>> = vec![None; learners.len()];
                let mut predict = |l: usize| -> std::result::Result<f64, String> {
                    cache[l]
                        .get_or_insert_with(|| match models[l] {
                            Ok(m) => m.predict_one(history).map_err(|e| e.to_string()),
                            Err(e) => Err(e.to_owned()),
                        })
                        .clone()
                };
                for (mi, plan) in plans.iter().enumerate() {
                    if run.failed[mi].is_some() {
                        continue;
                    }
                    let outcome = match plan {
                        Plan::Single(l) => predict(*l),
                        Plan::Pairs(pairs) => pairs
                            .iter()
                            .map(|&(p, a)| Ok((predict(p)?, predict(a)?)))
                            .collect::<std::result::Result<Vec<_>, String>>()
                            .and_then(|subs| {
                                let ensemble = run.ensembles[mi].as_mut().expect("adaptive methods own an ensemble");
                                let (mean, _) = ensemble.forecast(&subs).map_err(|e| e.to_string())?;
                                if cfg.record_weights {
                                    for ((pairing, state), &(yp, ya)) in
                                        ensemble.pairings().iter().zip(ensemble.states()).zip(&subs)
                                    {
                                        run.weights.push(WeightTraceRow {
                                            method: cfg.methods[mi].name().to_owned(),
                                            pairing: pairing.label(),
                                            row: CombinerTraceRow {
                                                series_id: series.id().to_owned(),
                                                t: t + 1,
                                                y: actual,
                                                yhat_partial: yp,
                                                yhat_all: ya,
                                                w_p: state.w_partial,
                                                w_a: state.w_all,
                                                yhat_combined: state.prev_pred_combined.unwrap_or(f64::NAN),
                                            },
                                        });
                                    }
                                }
                                ensemble.observe(actual).map_err(|e| e.to_string())?;
                                Ok(mean)
                            }),
                    };
                    match outcome {
                        Ok(pred) if pred.is_finite() => run.predictions[mi].push(pred),
                        Ok(pred) => {
                            run.failed[mi] = Some(FitFailure {
                                series_id: series.id().to_owned(),
                                method: cfg.methods[mi].name().to_owned(),
                                block: block + 1,
                                message: format!("non-finite forecast {pred} at t = {}", t + 1),
                            })
                        }
                        Err(msg) => {
                            run.failed[mi] = Some(FitFailure {
                                series_id: series.id().to_owned(),
                                method: cfg.methods[mi].name().to_owned(),
                                block: block + 1,
                                message: msg,
                            })
                        }
                    }
                }
            }
            Ok(())
        })?;
    }

    let start = train_len + 1;
    let mut traces = Vec::with_capacity(n_methods * dataset.len());
    let mut failures = Vec::new();
    for (mi, method) in cfg.methods.iter().enumerate() {
        for (run, series) in runs.iter_mut().zip(dataset.series()) {
            match run.failed[mi].take() {
                Some(f) => failures.push(f),
                None => traces.push(ForecastTrace {
                    series_id: series.id().to_owned(),
                    method: method.name().to_owned(),
                    start,
                    actuals: series.values()[train_len..needed].to_vec(),
                    predictions: std::mem::take(&mut run.predictions[mi]),
                }),
            }
        }
    }
    let refits = (0..n_methods).map(|mi| runs.iter().map(|r| r.refits[mi]).collect()).collect();
    let weights = runs.into_iter().flat_map(|r| r.weights).collect();
    Ok(PrequentialOutput { traces, refits, failures, weights })
}

fn check_lengths(actuals: &[f64], forecasts: &[f64]) -> Result<usize> {
    if actuals.len() != forecasts.len() {
        return Err(Error::LengthMismatch { left: actuals.len(), right: forecasts.len() });
    }
    if actuals.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one forecast".into()));
    }
    Ok(actuals.len())
}

/// Root mean squared error.
pub fn rmse(actuals: &[f64], forecasts: &[f64]) -> Result<f64> {
    let h = check_lengths(actuals, forecasts)?;
    let sse: f64 = actuals.iter().zip(forecasts).map(|(y, f)| (f - y) * (f - y)).sum();
    Ok((sse / h as f64).sqrt())
}

/// Mean absolute error.
pub fn mae(actuals: &[f64], forecasts: &[f64]) -> Result<f64> {
    let h = check_lengths(actuals, forecasts)?;
    Ok(actuals.iter().zip(forecasts).map(|(y, f)| (f - y).abs()).sum::<f64>() / h as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub series_id: String,
    pub method: String,
    pub rmse: f64,
    pub mae: f64,
}

impl SeriesScore {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Rmse => self.rmse,
            Metric::Mae => self.mae,
        }
    }
}

pub fn score_traces(traces: &[ForecastTrace]) -> Result<Vec<SeriesScore>> {
    traces
        .iter()
        .map(|tr| {
            Ok(SeriesScore {
                series_id: tr.series_id.clone(),
                method: tr.method.clone(),
                rmse: rmse(&tr.actuals, &tr.predictions)?,
                mae: mae(&tr.actuals, &tr.predictions)?,
            })
        })
        .collect()
}

/// Mean and median of `values`. Both are computed from the sorted values, so
/// the result does not depend on input order.
pub fn mean_median(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Some((mean, median))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_series: usize,
    pub failures: usize,
    pub mean_rmse: f64,
    pub median_rmse: f64,
    pub mean_mae: f64,
    pub median_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<SeriesScore>,
    pub summaries: Vec<MethodSummary>,
    pub failures: Vec<FitFailure>,
}

/// Per-method mean / median RMSE and MAE, methods in order of first appearance.
pub fn aggregate(scores: Vec<SeriesScore>, failures: Vec<FitFailure>) -> EvalReport {
    let mut order: Vec<&str> = Vec::new();
    let mut by_method: HashMap<&str, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for s in &scores {
        let entry = by_method.entry(&s.method).or_insert_with(|| {
            order.push(&s.method);
            (Vec::new(), Vec::new())
        });
        entry.0.push(s.rmse);
        entry.1.push(s.mae);
    }
    let mut failure_counts: HashMap<&str, usize> = HashMap::new();
    for f in &failures {
        *failure_counts.entry(&f.method).or_default() += 1;
    }
    let summaries = order
        .iter()
        .map(|m| {
            let (r, a) = &by_method[m];
            let (mean_rmse, median_rmse) = mean_median(r).expect("non-empty");
            let (mean_mae, median_mae) = mean_median(a).expect("non-empty");
            MethodSummary {
                method: (*m).to_owned(),
                n_series: r.len(),
                failures: failure_counts.get(m).copied().unwrap_or(0),
                mean_rmse,
                median_rmse,
                mean_mae,
                median_mae,
            }
        })
        .collect();
    EvalReport { scores, summaries, failures }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftParameter {
    /// `t_drift` of sudden drift.
    DriftPoint,
    /// `t_end - t_start` of incremental drift.
    DriftLength,
}

impl DriftParameter {
    pub fn for_kind(kind: DriftKind) -> Result<Self> {
        match kind {
            DriftKind::Sudden => Ok(DriftParameter::DriftPoint),
            DriftKind::Incremental => Ok(DriftParameter::DriftLength),
            other => Err(Error::InvalidInput(format!("{other} drift has no drift-point or drift-length parameter"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DriftParameter::DriftPoint => "drift_point",
            DriftParameter::DriftLength => "drift_length",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBin {
    pub lo: f64,
    pub hi: f64,
    pub n_series: usize,
    /// `(method, mean metric, series counted)` in order of first appearance.
    pub means: Vec<(String, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub parameter: DriftParameter,
    pub metric: Metric,
    pub bins: Vec<SensitivityBin>,
}

pub const SENSITIVITY_BINS: usize = 10;

/// Per-bin mean of `metric` for every method, series binned by drift point
/// (sudden) or drift length (incremental) into equal-width bins over the
/// observed range. Empty bins are omitted.
pub fn drift_sensitivity(dataset: &Dataset, scores: &[SeriesScore], metric: Metric) -> Result<SensitivityTable> {
    let kind = dataset.series().first().map_or(DriftKind::None, |s| s.drift().kind);
    let parameter = DriftParameter::for_kind(kind)?;
    let mut param_of: HashMap<&str, f64> = HashMap::with_capacity(dataset.len());
    for s in dataset.series() {
        let v = match parameter {
            DriftParameter::DriftPoint => s.drift().t_drift,
            DriftParameter::DriftLength => s.drift().drift_length(),
        }
        .ok_or_else(|| Error::InvalidInput(format!("series `{}` lacks {}", s.id(), parameter.as_str())))?;
        param_of.insert(s.id(), v as f64);
    }
    let (lo, hi) = param_of.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = (hi - lo) / SENSITIVITY_BINS as f64;
    let bin_of = |v: f64| -> usize {
        if width > 0.0 {
            (((v - lo) / width).floor() as usize).min(SENSITIVITY_BINS - 1)
        } else {
            0
        }
    };

    let mut series_per_bin = [0usize; SENSITIVITY_BINS];
    for &v in param_of.values() {
        series_per_bin[bin_of(v)] += 1;
    }
    let mut order: Vec<&str> = Vec::new();
    let mut values: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for s in scores {
        let v = *param_of
            .get(s.series_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("score for unknown series `{}`", s.series_id)))?;
        let mi = match order.iter().position(|m| *m == s.method) {
            Some(i) => i,
            None => {
                order.push(&s.method);
                order.len() - 1
            }
        };
        values.entry((bin_of(v), mi)).or_default().push(s.get(metric));
    }

    let bins = (0..SENSITIVITY_BINS)
        .filter(|&b| series_per_bin[b] > 0)
        .map(|b| SensitivityBin {
            lo: lo + width * b as f64,
            hi: if width > 0.0 { lo + width * (b + 1) as f64 } else { hi },
            n_series: series_per_bin[b],
            means: order
                .iter()
                .enumerate()
                .filter_map(|(mi, m)| {
                    let v = values.get(&(b, mi))?;
                    let (mean, _) = mean_median(v)?;
                    Some(((*m).to_owned(), mean, v.len()))
                })
                .collect(),
        })
        .collect();
    Ok(SensitivityTable { parameter, metric, bins })
}
