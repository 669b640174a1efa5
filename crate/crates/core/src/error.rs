use std::path::PathBuf;

use thiserror::Error;

use crate::nn::Mlp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: patient {patient_id} has non-increasing step order")]
    Ordering { line: u64, patient_id: String },

    #[error("incompatible file format: found {found}, expected {expected}")]
    Version { found: String, expected: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        /// Network parameters from the last step whose loss was finite.
        last_finite: Box<Mlp>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
