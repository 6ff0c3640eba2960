use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Backend,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty series")]
    EmptySeries,

    #[error("invalid measurement at index {index}: ({time}, {value})")]
    InvalidMeasurement { index: usize, time: f64, value: f64 },

    #[error("invalid subject {subject_id}: {reason}")]
    InvalidSubject { subject_id: String, reason: String },

    #[error("duplicate subject {0}")]
    DuplicateSubject(String),

    #[error("malformed row {row}, column {column}: {reason}")]
    MalformedRow { row: usize, column: String, reason: String },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid paragraph set: {0}")]
    InvalidParagraphs(String),

    #[error("insufficient training data: {0}")]
    InsufficientTrainingData(String),

    #[error("pca not fitted for {0}")]
    PcaNotFitted(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite feature value at row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },

    #[error("backend request failed after {attempts} attempt(s): {message}")]
    BackendRetryable { attempts: u32, message: String },

    #[error("backend error: {0}")]
    BackendFatal(String),

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported pooling {requested} for backend {backend_id}")]
    UnsupportedPooling { backend_id: String, requested: String },

    #[error("experiment failed at seed {seed}, fold {fold}: {source}")]
    Fold {
        seed: u64,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidParameter(_) => ErrorCategory::Config,
            Error::BackendRetryable { .. }
            | Error::BackendFatal(_)
            | Error::DimensionMismatch { .. }
            | Error::UnsupportedPooling { .. } => ErrorCategory::Backend,
            Error::Fold { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}
