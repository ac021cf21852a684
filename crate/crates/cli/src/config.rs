//! Run configuration, presets and the canonical config hash.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use driftcast::evaluate::{standard_methods, EvalConfig, MethodSpec};
use driftcast::simulate::SimConfig;
use driftcast::DriftKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable that overrides every simulator's base seed.
pub const SEED_ENV: &str = "DRIFTCAST_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Md,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// 100 series × 600 points, train 450, horizon 150, 3 blocks.
    Desk,
    /// 2000 series × 2000 points, train 1650, horizon 350, 7 blocks.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub horizon: usize,
    pub block_size: usize,
    #[serde(default)]
    pub record_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection { alpha: default_alpha() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("driftcast-out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Md]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One simulator config per drift kind to generate.
    #[serde(default)]
    pub simulate: Vec<SimConfig>,
    /// Existing dataset CSVs (with JSON sidecars) to evaluate as well.
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default = "standard_methods")]
    pub methods: Vec<MethodSpec>,
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (n_series, series_length, train_len, horizon) = match preset {
            Preset::Desk => (100, 600, 450, 150),
            Preset::Paper => (2000, 2000, 1650, 350),
        };
        let simulate = [DriftKind::Sudden, DriftKind::Incremental, DriftKind::Gradual]
            .into_iter()
            .map(|drift_kind| SimConfig { n_series, series_length, train_len, drift_kind, ..SimConfig::default() })
            .collect();
        RunConfig {
            simulate,
            datasets: Vec::new(),
            methods: standard_methods(),
            evaluate: EvaluateSection { horizon, block_size: 50, record_weights: false },
            stats: StatsSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `DRIFTCAST_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        match std::env::var(SEED_ENV) {
            Ok(raw) => self.override_seed(&raw),
            Err(std::env::VarError::NotPresent) => Ok(()),
            Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
        }
    }

    pub fn override_seed(&mut self, raw: &str) -> Result<(), CliError> {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")))?;
        for sim in &mut self.simulate {
            sim.base_seed = seed;
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            horizon: self.evaluate.horizon,
            block_size: self.evaluate.block_size,
            methods: self.methods.clone(),
            record_weights: self.evaluate.record_weights,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: driftcast::Error| CliError::Config(e.to_string());
        if self.simulate.is_empty() && self.datasets.is_empty() {
            return Err(CliError::Config("nothing to evaluate: give `simulate` or `datasets`".into()));
        }
        let mut kinds = HashSet::new();
        for sim in &self.simulate {
            sim.validate().map_err(invalid)?;
            if !kinds.insert(sim.drift_kind) {
                return Err(CliError::Config(format!("drift kind `{}` simulated twice", sim.drift_kind)));
            }
            if sim.series_length < sim.train_len + self.evaluate.horizon {
                return Err(CliError::Config(format!(
                    "{} series of length {} cannot hold train_len {} plus horizon {}",
                    sim.drift_kind, sim.series_length, sim.train_len, self.evaluate.horizon
                )));
            }
        }
        self.eval_config().validate().map_err(invalid)?;
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return Err(CliError::Config(format!("stats.alpha must lie in (0, 1), got {}", self.stats.alpha)));
        }
        if self.output.formats.is_empty() {
            return Err(CliError::Config("output.formats is empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON (sorted keys, defaults filled in) of
    /// every section except `output`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
