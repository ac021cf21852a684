//! Accuracy, significance and drift-sensitivity reports, computed from the
//! stored traces of a run directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use driftcast::evaluate::{
    aggregate, drift_sensitivity, score_traces, DriftParameter, EvalReport, FitFailure, ForecastTrace, MethodGroup,
    Metric, SensitivityTable,
};
use driftcast::series::read_dataset;
use driftcast::stats::{compare_methods, format_p, TestResult};
use driftcast::{Dataset, DriftKind};
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::CliError;

pub const DATA_DIR: &str = "data";
pub const TRACE_DIR: &str = "traces";
pub const REPORT_DIR: &str = "reports";
pub const RUN_CONFIG: &str = "run.json";

pub fn trace_path(run_dir: &Path, dataset: &str) -> PathBuf {
    run_dir.join(TRACE_DIR).join(format!("traces_{dataset}.csv"))
}

pub fn failure_path(run_dir: &Path, dataset: &str) -> PathBuf {
    run_dir.join(TRACE_DIR).join(format!("failures_{dataset}.csv"))
}

pub fn weight_path(run_dir: &Path, dataset: &str) -> PathBuf {
    run_dir.join(TRACE_DIR).join(format!("weights_{dataset}.csv"))
}

pub fn dataset_path(run_dir: &Path, dataset: &str) -> PathBuf {
    run_dir.join(DATA_DIR).join(format!("{dataset}.csv"))
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    series_id: String,
    method: String,
    t: usize,
    actual: f64,
    prediction: f64,
}

pub fn write_traces(path: &Path, traces: &[ForecastTrace]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| CliError::io(path, e))?);
    for tr in traces {
        for (i, (actual, prediction)) in tr.actuals.iter().zip(&tr.predictions).enumerate() {
            w.serialize(TraceRow {
                series_id: tr.series_id.clone(),
                method: tr.method.clone(),
                t: tr.start + i,
                actual: *actual,
                prediction: *prediction,
            })
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_traces(path: &Path) -> Result<Vec<ForecastTrace>, CliError> {
    let corrupt = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut traces: Vec<ForecastTrace> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for row in csv::Reader::from_reader(file).deserialize::<TraceRow>() {
        let row = row.map_err(|e| corrupt(e.to_string()))?;
        let key = (row.method.clone(), row.series_id.clone());
        match index.get(&key) {
            Some(&i) => {
                let tr = &mut traces[i];
                if row.t != tr.start + tr.predictions.len() {
                    return Err(corrupt(format!("non-consecutive t = {} for {}/{}", row.t, row.method, row.series_id)));
                }
                tr.actuals.push(row.actual);
                tr.predictions.push(row.prediction);
            }
            None => {
                index.insert(key, traces.len());
                traces.push(ForecastTrace {
                    series_id: row.series_id,
                    method: row.method,
                    start: row.t,
                    actuals: vec![row.actual],
                    predictions: vec![row.prediction],
                });
            }
        }
    }
    Ok(traces)
}

pub fn write_failures(path: &Path, failures: &[FitFailure]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| CliError::io(path, e))?);
    if failures.is_empty() {
        // serialize() emits the header with the first record
        w.write_record(["series_id", "method", "block", "message"]).map_err(|e| CliError::Input(e.to_string()))?;
    }
    for f in failures {
        w.serialize(f).map_err(|e| CliError::Input(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_failures(path: &Path) -> Result<Vec<FitFailure>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<Vec<FitFailure>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Significance {
    Tested(TestResult),
    Skipped(String),
}

/// Everything reported for one dataset.
#[derive(Debug, Clone)]
pub struct DatasetTables {
    pub name: String,
    pub dataset: Dataset,
    /// Methods in report order with their group.
    pub methods: Vec<(String, MethodGroup)>,
    pub report: EvalReport,
    pub significance: Significance,
    /// RMSE and MAE tables for drift kinds with a drift parameter.
    pub sensitivity: Option<(SensitivityTable, SensitivityTable)>,
}

impl DatasetTables {
    pub fn kind(&self) -> DriftKind {
        self.dataset.series().first().map_or(DriftKind::None, |s| s.drift().kind)
    }

    /// Per-series RMSE of `method`, keyed by series id.
    pub fn rmse_by_series(&self, method: &str) -> HashMap<&str, f64> {
        self.report.scores.iter().filter(|s| s.method == method).map(|s| (s.series_id.as_str(), s.rmse)).collect()
    }
}

fn kind_rank(name: &str) -> (usize, String) {
    let rank = ["sudden", "incremental", "gradual"].iter().position(|k| *k == name).unwrap_or(3);
    (rank, name.to_owned())
}

/// Dataset names of a run directory, sudden / incremental / gradual first.
pub fn dataset_names(run_dir: &Path) -> Result<Vec<String>, CliError> {
    let dir = run_dir.join(TRACE_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(&dir, e))?;
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some(name) = file.strip_prefix("traces_").and_then(|f| f.strip_suffix(".csv")) {
            names.push(name.to_owned());
        }
    }
    if names.is_empty() {
        return Err(CliError::Input(format!("no trace files in {}", dir.display())));
    }
    names.sort_by_key(|n| kind_rank(n));
    Ok(names)
}

fn report_order(cfg: &RunConfig) -> Vec<(String, MethodGroup)> {
    let mut methods: Vec<(String, MethodGroup)> =
        cfg.methods.iter().map(|m| (m.name().to_owned(), m.group())).collect();
    methods.sort_by_key(|(_, g)| *g);
    methods
}

fn significance(report: &EvalReport, methods: &[(String, MethodGroup)], alpha: f64) -> Result<Significance, CliError> {
    let present: Vec<&str> =
        methods.iter().map(|(m, _)| m.as_str()).filter(|m| report.scores.iter().any(|s| s.method == *m)).collect();
    if present.len() < 2 {
        return Ok(Significance::Skipped(format!("fewer than two methods (k = {})", present.len())));
    }
    let mut by_series: HashMap<&str, HashMap<&str, f64>> = HashMap::new();
    let mut series_order: Vec<&str> = Vec::new();
    for s in &report.scores {
        let row = by_series.entry(&s.series_id).or_insert_with(|| {
            series_order.push(&s.series_id);
            HashMap::new()
        });
        row.insert(&s.method, s.rmse);
    }
    // only series scored by every method enter the rank matrix
    let errors: Vec<Vec<f64>> = series_order
        .iter()
        .filter_map(|id| present.iter().map(|m| by_series[id].get(m).copied()).collect::<Option<Vec<f64>>>())
        .collect();
    if errors.len() < 2 {
        return Ok(Significance::Skipped(format!("fewer than two fully scored series (N = {})", errors.len())));
    }
    let names: Vec<String> = present.iter().map(|m| (*m).to_owned()).collect();
    Ok(Significance::Tested(compare_methods(&errors, &names, alpha)?))
}

/// Recomputes every report table of `run_dir` from its stored traces.
pub fn load_tables(run_dir: &Path) -> Result<Vec<DatasetTables>, CliError> {
    let cfg = RunConfig::load(&run_dir.join(RUN_CONFIG))?;
    let methods = report_order(&cfg);
    dataset_names(run_dir)?
        .into_iter()
        .map(|name| {
            let dataset = read_dataset(&dataset_path(run_dir, &name))?;
            let traces = read_traces(&trace_path(run_dir, &name))?;
            let failures = read_failures(&failure_path(run_dir, &name))?;
            let report = aggregate(score_traces(&traces)?, failures);
            let significance = significance(&report, &methods, cfg.stats.alpha)?;
            let kind = dataset.series().first().map_or(DriftKind::None, |s| s.drift().kind);
            let sensitivity = match DriftParameter::for_kind(kind) {
                Ok(_) if !report.scores.is_empty() => Some((
                    drift_sensitivity(&dataset, &report.scores, Metric::Rmse)?,
                    drift_sensitivity(&dataset, &report.scores, Metric::Mae)?,
                )),
                _ => None,
            };
            Ok(DatasetTables { name, dataset, methods: methods.clone(), report, significance, sensitivity })
        })
        .collect()
}

fn metric_values(t: &DatasetTables, method: &str) -> Option<[f64; 4]> {
    t.report
        .summaries
        .iter()
        .find(|s| s.method == method)
        .map(|s| [s.mean_rmse, s.median_rmse, s.mean_mae, s.median_mae])
}

fn failure_count(t: &DatasetTables, method: &str) -> usize {
    t.report.failures.iter().filter(|f| f.method == method).count()
}

/// Per metric column: (best value overall, best value per group).
fn column_bests(t: &DatasetTables) -> [(f64, HashMap<MethodGroup, f64>); 4] {
    std::array::from_fn(|c| {
        let mut overall = f64::INFINITY;
        let mut groups: HashMap<MethodGroup, f64> = HashMap::new();
        for (m, g) in &t.methods {
            if let Some(v) = metric_values(t, m) {
                overall = overall.min(v[c]);
                let e = groups.entry(*g).or_insert(f64::INFINITY);
                *e = e.min(v[c]);
            }
        }
        (overall, groups)
    })
}

pub fn accuracy_csv(tables: &[DatasetTables]) -> String {
    let mut out = String::from(
        "drift_kind,group,method,mean_rmse,median_rmse,mean_mae,median_mae,group_best,n_series,failures\n",
    );
    for t in tables {
        let bests = column_bests(t);
        for (m, g) in &t.methods {
            let n = t.report.summaries.iter().find(|s| &s.method == m).map_or(0, |s| s.n_series);
            let (cells, group_best) = match metric_values(t, m) {
                Some(v) => (v.map(|x| x.to_string()).join(","), v[0] == bests[0].1[g]),
                None => (",,,".to_owned(), false),
            };
            let _ = writeln!(out, "{},{},{m},{cells},{group_best},{n},{}", t.name, g.as_str(), failure_count(t, m));
        }
    }
    out
}

pub fn accuracy_md(tables: &[DatasetTables]) -> String {
    let mut out = String::from("# Forecast accuracy\n\nItalic: best in group. Bold: best overall.\n");
    for t in tables {
        let total_failures = t.report.failures.len();
        let _ = write!(out, "\n## {}\n\n", t.name);
        if total_failures > 0 {
            let _ = writeln!(out, "Fit failures excluded from the means: {total_failures}\n");
        }
        out.push_str("| Group | Method | Mean RMSE | Median RMSE | Mean MAE | Median MAE | Series | Failures |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        let bests = column_bests(t);
        for (m, g) in &t.methods {
            let n = t.report.summaries.iter().find(|s| &s.method == m).map_or(0, |s| s.n_series);
            let cells: Vec<String> = match metric_values(t, m) {
                Some(v) => (0..4)
                    .map(|c| {
                        let text = format!("{:.4}", v[c]);
                        match (v[c] == bests[c].0, v[c] == bests[c].1[g]) {
                            (true, _) => format!("***{text}***"),
                            (false, true) => format!("*{text}*"),
                            _ => text,
                        }
                    })
                    .collect(),
                None => vec!["-".to_owned(); 4],
            };
            let _ = writeln!(out, "| {} | {m} | {} | {n} | {} |", g.as_str(), cells.join(" | "), failure_count(t, m));
        }
    }
    out
}

pub fn significance_csv(tables: &[DatasetTables]) -> String {
    let mut out = String::from(
        "drift_kind,method,avg_rank,z,p_raw,p_hochberg,significantly_worse,is_control,n_series,friedman_statistic,friedman_p,note\n",
    );
    for t in tables {
        match &t.significance {
            Significance::Tested(r) => {
                let _ = writeln!(
                    out,
                    "{},{},{},,,,false,true,{},{},{},",
                    t.name, r.control, r.control_mean_rank, r.n_series, r.friedman_statistic, r.friedman_p
                );
                for c in &r.comparisons {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},false,{},{},{},",
                        t.name,
                        c.method,
                        c.mean_rank,
                        c.z,
                        c.raw_p,
                        c.adjusted_p,
                        c.rejected,
                        r.n_series,
                        r.friedman_statistic,
                        r.friedman_p
                    );
                }
            }
            Significance::Skipped(note) => {
                let _ = writeln!(out, "{},,,,,,,,,,,skipped: {note}", t.name);
            }
        }
    }
    out
}

pub fn significance_md(tables: &[DatasetTables]) -> String {
    let mut out = String::from("# Friedman test with Hochberg post-hoc\n");
    for t in tables {
        let _ = write!(out, "\n## {}\n\n", t.name);
        match &t.significance {
            Significance::Tested(r) => {
                let _ = writeln!(
                    out,
                    "Friedman statistic {:.4}, p {} over {} series (alpha = {}).\n",
                    r.friedman_statistic,
                    format_p(r.friedman_p),
                    r.n_series,
                    r.alpha
                );
                out.push_str("| Method | Avg. rank | p (Hochberg) | Significantly worse |\n|---|---|---|---|\n");
                let _ = writeln!(out, "| {} (control) | {:.4} | - | - |", r.control, r.control_mean_rank);
                for c in &r.comparisons {
                    let _ = writeln!(
                        out,
                        "| {} | {:.4} | {} | {} |",
                        c.method,
                        c.mean_rank,
                        format_p(c.adjusted_p),
                        if c.rejected { "yes" } else { "no" }
                    );
                }
            }
            Significance::Skipped(note) => {
                let _ = writeln!(out, "Skipped: {note}.");
            }
        }
    }
    out
}

pub fn sensitivity_csv(tables: &[DatasetTables]) -> String {
    let mut out = String::from("drift_kind,parameter,bin_lo,bin_hi,n_series,method,mean_rmse,mean_mae,n_scored\n");
    for t in tables {
        let Some((rmse, mae)) = &t.sensitivity else { continue };
        for (rb, mb) in rmse.bins.iter().zip(&mae.bins) {
            for (m, _) in &t.methods {
                let r = rb.means.iter().find(|(name, _, _)| name == m);
                let a = mb.means.iter().find(|(name, _, _)| name == m);
                if let (Some((_, r, n)), Some((_, a, _))) = (r, a) {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{m},{r},{a},{n}",
                        t.name,
                        rmse.parameter.as_str(),
                        rb.lo,
                        rb.hi,
                        rb.n_series
                    );
                }
            }
        }
    }
    out
}

pub fn sensitivity_md(tables: &[DatasetTables]) -> String {
    let mut out = String::from("# Drift sensitivity (mean RMSE per bin)\n");
    for t in tables {
        let Some((rmse, _)) = &t.sensitivity else { continue };
        let _ = write!(out, "\n## {} by {}\n\n", t.name, rmse.parameter.as_str());
        let names: Vec<&str> = t.methods.iter().map(|(m, _)| m.as_str()).collect();
        let _ = writeln!(out, "| Bin | Series | {} |", names.join(" | "));
        let _ = writeln!(out, "|---|---|{}", "---|".repeat(names.len()));
        for b in &rmse.bins {
            let cells: Vec<String> = names
                .iter()
                .map(|m| {
                    b.means.iter().find(|(name, _, _)| name == m).map_or("-".to_owned(), |(_, v, _)| format!("{v:.4}"))
                })
                .collect();
            let _ = writeln!(out, "| [{:.1}, {:.1}] | {} | {} |", b.lo, b.hi, b.n_series, cells.join(" | "));
        }
    }
    out
}

/// Writes the reports of `run_dir` in every requested format.
pub fn render_reports(run_dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, CliError> {
    let tables = load_tables(run_dir)?;
    let dir = run_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut written = Vec::new();
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    for format in formats {
        let files: [(&str, String); 3] = match format {
            Format::Csv => [
                ("accuracy.csv", accuracy_csv(&tables)),
                ("significance.csv", significance_csv(&tables)),
                ("sensitivity.csv", sensitivity_csv(&tables)),
            ],
            Format::Md => [
                ("accuracy.md", accuracy_md(&tables)),
                ("significance.md", significance_md(&tables)),
                ("sensitivity.md", sensitivity_md(&tables)),
            ],
        };
        for (file, body) in files {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
