//! Imputation of missing hourly water-meter consumption.
//!
//! The pipeline runs cumulative-register readings through hourly
//! differencing ([`ingest`]), cuts the hourly series into 24-hour day
//! vectors and splits complete days for training and masked validation
//! ([`preprocess`]), fits one of several imputers ([`impute`], [`neural`])
//! and scores them by mean absolute error per building, with per-building
//! ("dedicated") or pooled ("common") models ([`eval`]).

pub mod artifact;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod impute;
pub mod ingest;
pub mod neural;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tables;

pub use data::{missing_fraction, validate_day_matrix, CompleteRow, DayMatrix, DayRow, HourlySeries, NormStats, RawReading, SplitIndex, Violation, HOURS};
pub use error::{Error, Result};
pub use impute::{Imputer, ModelSpec, TrainedModel};
