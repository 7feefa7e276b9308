use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("index {index} out of range for order {order}")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("duplicate index {0} in selection")]
    DuplicateIndex(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),

    #[error("variable '{0}' has a self-loop")]
    SelfLoop(String),

    #[error("conditional variance of '{variable}' must be positive, got {value}")]
    NonPositiveVariance { variable: String, value: f64 },

    #[error("variable sets differ")]
    VariableMismatch,

    #[error("unknown variable '{0}'")]
    UnknownVariable(String),

    #[error("duplicate variable name '{0}'")]
    DuplicateVariableName(String),

    #[error("at most {max} variables supported here, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("alpha must exceed n+1 (alpha = {alpha}, n = {n})")]
    AlphaTooSmall { alpha: f64, n: usize },

    #[error("alpha must exceed n-1 (alpha = {alpha}, n = {n})")]
    AlphaBelowDimension { alpha: f64, n: usize },

    #[error("nu must be positive, got {0}")]
    NuNotPositive(f64),

    #[error("alpha must be an integer of at least n for constructive Wishart sampling, got {0}")]
    NonIntegerAlpha(f64),

    #[error("structure is not part of the supplied universe")]
    DagNotInUniverse,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input")]
    EmptyInput,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
