use thiserror::Error;

use crate::types::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate (zero-norm) vector: {0}")]
    DegenerateVector(String),

    #[error("dimension mismatch for {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("infeasible training set: {0}")]
    InfeasibleTrainingSet(String),

    #[error("problem too large for exhaustive search: m = {m}, limit {limit}")]
    SizeLimit { m: usize, limit: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset failed validation:\n{0}")]
    InvalidDataset(ValidationReport),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported model format_version {0}")]
    UnknownVersion(u64),

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    /// True for failures caused by the training problem itself rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::InfeasibleTrainingSet(_))
    }
}
