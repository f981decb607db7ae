use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("manifest disagrees with data: {0}")]
    Manifest(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("tail needs {needed} values but only {available} were given")]
    InsufficientTail { needed: usize, available: usize },

    #[error("degenerate tail: all tail values are equal")]
    DegenerateTail,

    #[error("weibull fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("class {class}: {source}")]
    Class {
        class: String,
        #[source]
        source: Box<Error>,
    },

    #[error("class {0} has no correctly classified samples")]
    NoCorrectSamples(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("empty gallery")]
    EmptyGallery,

    #[error("threshold requested but none is set")]
    ThresholdUnset,

    #[error("policy has no threshold for class {0}")]
    MissingClassThreshold(String),

    #[error("unknown class label {0}")]
    UnknownLabel(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("fold plan: {0}")]
    FoldPlan(String),

    #[error("label leakage: sample {0} of an unknown class reached a training structure")]
    Leakage(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_class(self, class: impl Into<String>) -> Self {
        Error::Class {
            class: class.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn for_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}
