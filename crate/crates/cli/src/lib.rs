//! Orchestration behind the `driftcast` binary: simulation, prequential
//! campaigns, statistics, report rendering and the run manifest.
//!
//! A run directory holds
//!
//! ```text
//! run.json                      resolved configuration
//! data/<name>.csv|.json         evaluated datasets
//! traces/traces_<name>.csv      series_id,method,t,actual,prediction
//! traces/failures_<name>.csv    excluded (series, method) pairs
//! traces/weights_<name>.csv     combiner weights (record_weights only)
//! reports/                      accuracy / significance / sensitivity
//! manifest.json                 config hash, timings, file digests
//! ```

pub mod config;
pub mod report;

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use driftcast::evaluate::{prequential_run, WeightTraceRow};
use driftcast::series::{read_dataset, write_dataset};
use driftcast::simulate::make_dataset;
use driftcast::Dataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};
use crate::report::{
    dataset_path, failure_path, render_reports, trace_path, weight_path, write_failures, write_traces,
};

/// Share of series a method may fail on before the run exits with
/// [`EXIT_PARTIAL_FAILURE`].
pub const FAILURE_THRESHOLD: f64 = 0.01;
pub const MANIFEST: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL_FAILURE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] driftcast::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_owned(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes one dataset per `simulate` entry to `<out>/data/`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    for sim in &cfg.simulate {
        sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    if cfg.simulate.is_empty() {
        return Err(CliError::Config("no `simulate` entries".into()));
    }
    create_dir(&out.join(report::DATA_DIR))?;
    let mut written = Vec::new();
    for sim in &cfg.simulate {
        let dataset = make_dataset(sim)?;
        let path = dataset_path(out, dataset.name());
        write_dataset(&dataset, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCount {
    pub dataset: String,
    pub method: String,
    pub failed: usize,
    pub n_series: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub package: String,
    pub version: String,
    pub core_version: String,
    pub config_hash: String,
    pub threads: usize,
    pub timings: Vec<StageTiming>,
    pub failures: Vec<FailureCount>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn exceeds_failure_threshold(&self) -> bool {
        self.failures.iter().any(|f| f.failed as f64 > FAILURE_THRESHOLD * f.n_series as f64)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.exceeds_failure_threshold() {
            EXIT_PARTIAL_FAILURE
        } else {
            EXIT_OK
        }
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

/// Size and SHA-256 of every file under `root` except the manifest, sorted by path.
pub fn file_inventory(root: &Path) -> Result<Vec<FileEntry>, CliError> {
    let mut paths = Vec::new();
    collect_files(root, root, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            Ok(FileEntry { path: rel, bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) })
        })
        .collect()
}

fn write_weights(path: &Path, rows: &[WeightTraceRow]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| CliError::io(path, e);
    writeln!(w, "method,pairing,series_id,t,y,yhat_partial,yhat_all,w_p,w_a,yhat_combined").map_err(io)?;
    for r in rows {
        let c = &r.row;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method, r.pairing, c.series_id, c.t, c.y, c.yhat_partial, c.yhat_all, c.w_p, c.w_a, c.yhat_combined
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn load_datasets(cfg: &RunConfig) -> Result<Vec<Dataset>, CliError> {
    let mut datasets = cfg.simulate.iter().map(make_dataset).collect::<Result<Vec<_>, _>>()?;
    for path in &cfg.datasets {
        datasets.push(read_dataset(path)?);
    }
    let mut names = HashSet::new();
    for ds in &datasets {
        if !names.insert(ds.name().to_owned()) {
            return Err(CliError::Config(format!("two datasets are named `{}`", ds.name())));
        }
        let needed = ds.train_len() + cfg.evaluate.horizon;
        if ds.series_length() < needed {
            return Err(CliError::Config(format!(
                "dataset `{}` has {} points per series, needs train_len + horizon = {needed}",
                ds.name(),
                ds.series_length()
            )));
        }
    }
    Ok(datasets)
}

fn run_in_pool(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming { stage: stage.to_owned(), seconds: clock.elapsed().as_secs_f64() });
        clock = Instant::now();
    };

    create_dir(&out.join(report::DATA_DIR))?;
    create_dir(&out.join(report::TRACE_DIR))?;
    write_json(&out.join(report::RUN_CONFIG), cfg)?;

    let datasets = load_datasets(cfg)?;
    for ds in &datasets {
        write_dataset(ds, &dataset_path(out, ds.name()))?;
    }
    lap("simulate", &mut timings);

    let eval = cfg.eval_config();
    let mut failures = Vec::new();
    for ds in &datasets {
        let run = prequential_run(ds, &eval)?;
        write_traces(&trace_path(out, ds.name()), &run.traces)?;
        write_failures(&failure_path(out, ds.name()), &run.failures)?;
        if eval.record_weights {
            write_weights(&weight_path(out, ds.name()), &run.weights)?;
        }
        for m in &eval.methods {
            let failed = run.failures.iter().filter(|f| f.method == m.name()).count();
            if failed > 0 {
                failures.push(FailureCount {
                    dataset: ds.name().to_owned(),
                    method: m.name().to_owned(),
                    failed,
                    n_series: ds.len(),
                });
            }
        }
    }
    lap("evaluate", &mut timings);

    render_reports(out, &cfg.output.formats)?;
    lap("report", &mut timings);

    Ok(RunManifest {
        package: env!("CARGO_PKG_NAME").to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        core_version: driftcast::VERSION.to_owned(),
        config_hash: cfg.hash(),
        threads: rayon::current_num_threads(),
        timings,
        failures,
        files: file_inventory(out)?,
    })
}

/// Runs the full campaign into `cfg.output.dir` on a pool of `threads`
/// workers (rayon's default when `None`).
pub fn cmd_run(cfg: &RunConfig, threads: Option<usize>) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Input(e.to_string()))?;
    let out = cfg.output.dir.clone();
    let manifest = pool.install(|| run_in_pool(cfg, &out))?;
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(RunOutcome { out_dir: out, manifest })
}

/// Re-renders the reports of an existing run directory from its traces.
pub fn cmd_report(run_dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, CliError> {
    render_reports(run_dir, formats)
}
