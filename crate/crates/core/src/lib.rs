//! Continuous adaptive weighting for concept drift in global time series
//! forecasting.
//!
//! Two sub-models are fitted per refresh: `M_partial` on the most recent
//! observations and `M_all` on the full history. Their one-step forecasts are
//! blended online by either error contribution weighting (ECW) or gradient
//! descent weighting (GDW). The crate also ships the drift simulators,
//! recency-weighted base learners, the prequential evaluation harness and the
//! Friedman / Hochberg significance tests used to compare methods.
//!
//! Time indices are 1-based everywhere they cross the public API or a file
//! boundary; slices are 0-based internally.

pub mod combine;
pub mod error;
pub mod evaluate;
pub mod learners;
pub mod series;
pub mod simulate;
pub mod stats;
pub mod weighting;

pub use error::{Error, Result};
pub use series::{Dataset, DriftKind, DriftMeta, TimeSeries};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
