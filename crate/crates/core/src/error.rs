use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report. `code()` gives the stable
/// machine-readable name used in CLI error JSON.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("series has no slots")]
    EmptySeries,
    #[error("bad CSV header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("line {line}: negative register value {value}")]
    NegativeRegister { line: u64, value: f64 },
    #[error("line {line}: {reason}")]
    MalformedLine { line: u64, reason: String },
    #[error("building {building}: duplicate timestamp {timestamp} with conflicting registers {first} and {second}")]
    ConflictingDuplicate {
        building: String,
        timestamp: String,
        first: f64,
        second: f64,
    },
    #[error("register decreased at hour {hour}: {from} -> {to}")]
    RegisterReset { hour: String, from: f64, to: f64 },
    #[error("readings are not sorted by timestamp or span several buildings (index {index})")]
    UnsortedInput { index: usize },
    #[error("only {found} complete days, need at least {needed}")]
    InsufficientCompleteDays { found: usize, needed: usize },
    #[error("need at least {needed} rows, got {found}")]
    InsufficientData { found: usize, needed: usize },
    #[error("row {row} already has a missing cell")]
    RowNotComplete { row: usize },
    #[error("gap rate {rate} cannot be satisfied: {reason}")]
    CannotSatisfyRate { rate: f64, reason: String },
    #[error("query row has no observed cells")]
    EmptyQueryRow,
    #[error("column {column} is never observed")]
    UnlearnableColumn { column: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("no cells to score")]
    NoCellsToScore,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("artifact version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("artifact checksum does not match its contents")]
    Checksum,
    #[error("artifact holds a `{found}` model, expected `{expected}`")]
    KindMismatch { found: String, expected: String },
    #[error("not a model artifact")]
    BadMagic,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptySeries => "empty-series",
            Error::BadHeader { .. } => "bad-header",
            Error::NegativeRegister { .. } => "negative-register",
            Error::MalformedLine { .. } => "malformed-line",
            Error::ConflictingDuplicate { .. } => "conflicting-duplicate",
            Error::RegisterReset { .. } => "register-reset",
            Error::UnsortedInput { .. } => "unsorted-input",
            Error::InsufficientCompleteDays { .. } => "insufficient-complete-days",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::RowNotComplete { .. } => "row-not-complete",
            Error::CannotSatisfyRate { .. } => "cannot-satisfy-rate",
            Error::EmptyQueryRow => "empty-query-row",
            Error::UnlearnableColumn { .. } => "unlearnable-column",
            Error::Shape(_) => "shape-error",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::NoCellsToScore => "no-cells-to-score",
            Error::Config(_) => "config-error",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::Checksum => "checksum-error",
            Error::KindMismatch { .. } => "kind-mismatch",
            Error::BadMagic => "bad-magic",
            Error::Io { .. } => "io-error",
            Error::Json(_) => "json-error",
        }
    }

    pub(crate) fn io(context: impl fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            context: context.to_string(),
            source,
        }
    }
}
