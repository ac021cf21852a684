//! Shared domain types: series, drift metadata, datasets and their file
//! format, plus the seeding policy used by every generator.
//!
//! # Randomness
//!
//! All randomness flows from a single `u64` base seed. Series `s` receives
//! `base_seed + s` (wrapping), and every independent draw sequence for that
//! series is a separate ChaCha8 stream keyed by that seed (see
//! [`rng_for`]). ChaCha8 is counter based and platform independent, so a
//! dataset is reproducible byte-for-byte regardless of thread count.
//!
//! # File format
//!
//! A dataset is a CSV file with header `series_id,t,value` (`t` 1-based, LF
//! line endings) plus a JSON sidecar with the same stem holding the name,
//! `train_len`, per-series [`DriftMeta`] and the generating [`SimConfig`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::SimConfig;

/// Per-series seed: `base_seed + series_ordinal` with wrapping arithmetic.
pub fn derive_series_seed(base_seed: u64, series_ordinal: u64) -> u64 {
    base_seed.wrapping_add(series_ordinal)
}

/// Independent draw streams of one series seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Noise of the first AR process (pre-drift concept).
    First = 1,
    /// Noise of the second AR process (post-drift concept).
    Second = 2,
    /// Initial values of the second AR process.
    SecondInit = 3,
    /// Drift point / drift window sampling.
    DriftParams = 4,
    /// Bernoulli membership draws of gradual drift.
    Membership = 5,
}

/// ChaCha8 generator for `seed`, positioned on `stream`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Sudden,
    Incremental,
    Gradual,
    None,
}

impl DriftKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DriftKind::Sudden => "sudden",
            DriftKind::Incremental => "incremental",
            DriftKind::Gradual => "gradual",
            DriftKind::None => "none",
        }
    }
}

impl std::fmt::Display for DriftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DriftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sudden" => Ok(DriftKind::Sudden),
            "incremental" => Ok(DriftKind::Incremental),
            "gradual" => Ok(DriftKind::Gradual),
            "none" => Ok(DriftKind::None),
            other => Err(Error::InvalidInput(format!("unknown drift kind `{other}`"))),
        }
    }
}

/// Where (and how) the concept changes inside a series. Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftMeta {
    pub kind: DriftKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_drift: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<usize>,
    pub seed: u64,
}

impl DriftMeta {
    pub fn sudden(t_drift: usize, seed: u64) -> Self {
        DriftMeta { kind: DriftKind::Sudden, t_drift: Some(t_drift), t_start: None, t_end: None, seed }
    }

    pub fn incremental(t_start: usize, t_end: usize, seed: u64) -> Self {
        DriftMeta { kind: DriftKind::Incremental, t_drift: None, t_start: Some(t_start), t_end: Some(t_end), seed }
    }

    pub fn gradual(seed: u64) -> Self {
        DriftMeta { kind: DriftKind::Gradual, t_drift: None, t_start: None, t_end: None, seed }
    }

    pub fn none(seed: u64) -> Self {
        DriftMeta { kind: DriftKind::None, t_drift: None, t_start: None, t_end: None, seed }
    }

    /// Drift length `t_end - t_start` of an incremental drift.
    pub fn drift_length(&self) -> Option<usize> {
        match (self.t_start, self.t_end) {
            (Some(s), Some(e)) => Some(e - s),
            _ => None,
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let in_range = |i: usize| -> Result<()> {
            if i == 0 || i > len {
                Err(Error::IndexOutOfRange { index: i, len })
            } else {
                Ok(())
            }
        };
        match self.kind {
            DriftKind::Sudden => {
                let t = self.t_drift.ok_or_else(|| Error::InvalidInput("sudden drift requires t_drift".into()))?;
                if self.t_start.is_some() || self.t_end.is_some() {
                    return Err(Error::InvalidInput("sudden drift must not set t_start/t_end".into()));
                }
                in_range(t)
            }
            DriftKind::Incremental => {
                let (s, e) = match (self.t_start, self.t_end) {
                    (Some(s), Some(e)) => (s, e),
                    _ => return Err(Error::InvalidInput("incremental drift requires t_start and t_end".into())),
                };
                in_range(s)?;
                in_range(e)?;
                if s >= e {
                    return Err(Error::InvalidInput(format!("t_start {s} must precede t_end {e}")));
                }
                Ok(())
            }
            DriftKind::Gradual | DriftKind::None => Ok(()),
        }
    }
}

/// One simulated series. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    id: String,
    values: Vec<f64>,
    train_len: usize,
    drift: DriftMeta,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>, train_len: usize, drift: DriftMeta) -> Result<Self> {
        let id = id.into();
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { series: id, position: position + 1 });
        }
        if train_len == 0 || train_len > values.len() {
            return Err(Error::InvalidInput(format!(
                "train_len {train_len} invalid for series `{id}` of length {}",
                values.len()
            )));
        }
        drift.validate(values.len())?;
        Ok(TimeSeries { id, values, train_len, drift })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of training observations; position `train_len + 1` is the first test point.
    pub fn train_len(&self) -> usize {
        self.train_len
    }

    pub fn drift(&self) -> &DriftMeta {
        &self.drift
    }

    /// Observations at 1-based positions `1..=through`.
    pub fn prefix(&self, through: usize) -> &[f64] {
        &self.values[..through.min(self.values.len())]
    }

    /// Copy of this series with `values` replaced (same id, split and drift).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        TimeSeries::new(self.id.clone(), values, self.train_len, self.drift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    series: Vec<TimeSeries>,
    generator_config: SimConfig,
}

impl Dataset {
    pub fn new(name: impl Into<String>, series: Vec<TimeSeries>, generator_config: SimConfig) -> Result<Self> {
        let name = name.into();
        if let Some(first) = series.first() {
            let (len, train) = (first.len(), first.train_len());
            let mut ids = HashSet::with_capacity(series.len());
            for s in &series {
                if s.len() != len || s.train_len() != train {
                    return Err(Error::InvalidInput(format!(
                        "series `{}` has shape ({}, {}) but dataset uses ({len}, {train})",
                        s.id(),
                        s.len(),
                        s.train_len()
                    )));
                }
                if !ids.insert(s.id()) {
                    return Err(Error::InvalidInput(format!("duplicate series id `{}`", s.id())));
                }
            }
        }
        Ok(Dataset { name, series, generator_config })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn train_len(&self) -> usize {
        self.series.first().map_or(0, TimeSeries::train_len)
    }

    pub fn series_length(&self) -> usize {
        self.series.first().map_or(0, TimeSeries::len)
    }

    pub fn generator_config(&self) -> &SimConfig {
        &self.generator_config
    }

    /// Same dataset with every series' values mapped through `f(series, values)`.
    pub fn map_values<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&TimeSeries) -> Vec<f64>,
    {
        let series = self.series.iter().map(|s| s.with_values(f(s))).collect::<Result<Vec<_>>>()?;
        Dataset::new(self.name.clone(), series, self.generator_config.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarSeries {
    id: String,
    drift: DriftMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    name: String,
    train_len: usize,
    series_length: usize,
    series: Vec<SidecarSeries>,
    generator_config: SimConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row<'a> {
    series_id: &'a str,
    t: usize,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct OwnedRow {
    series_id: String,
    t: usize,
    value: f64,
}

/// Path of the JSON sidecar belonging to a dataset CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `dataset` as CSV at `csv_path` plus its JSON sidecar.
pub fn write_dataset(dataset: &Dataset, csv_path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(csv_path)?));
    for s in dataset.series() {
        for (k, &value) in s.values().iter().enumerate() {
            writer.serialize(Row { series_id: s.id(), t: k + 1, value })?;
        }
    }
    writer.flush()?;

    let sidecar = Sidecar {
        name: dataset.name().to_owned(),
        train_len: dataset.train_len(),
        series_length: dataset.series_length(),
        series: dataset.series().iter().map(|s| SidecarSeries { id: s.id().to_owned(), drift: *s.drift() }).collect(),
        generator_config: dataset.generator_config().clone(),
    };
    let mut out = BufWriter::new(File::create(sidecar_path(csv_path))?);
    serde_json::to_writer_pretty(&mut out, &sidecar)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(csv_path))?))?;
    let index: HashMap<&str, usize> = sidecar.series.iter().enumerate().map(|(k, s)| (s.id.as_str(), k)).collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(sidecar.series_length); sidecar.series.len()];

    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
    for row in reader.deserialize::<OwnedRow>() {
        let row = row?;
        let slot = *index
            .get(row.series_id.as_str())
            .ok_or_else(|| Error::Format(format!("series `{}` missing from sidecar", row.series_id)))?;
        let expected = values[slot].len() + 1;
        if row.t != expected {
            return Err(Error::Format(format!("series `{}`: expected t = {expected}, found {}", row.series_id, row.t)));
        }
        values[slot].push(row.value);
    }

    let series = sidecar
        .series
        .into_iter()
        .zip(values)
        .map(|(meta, vals)| {
            if vals.len() != sidecar.series_length {
                return Err(Error::Format(format!(
                    "series `{}` has {} points, sidecar says {}",
                    meta.id,
                    vals.len(),
                    sidecar.series_length
                )));
            }
            TimeSeries::new(meta.id, vals, sidecar.train_len, meta.drift)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sidecar.name, series, sidecar.generator_config)
}
