use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error in {path} at row {row}, column `{column}`: {message}")]
    Ingest {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidSpec(String),

    #[error("cannot fit {model}: {reason}")]
    Fit { model: String, reason: String },

    #[error("singular design while fitting {model}; consider a positive ridge penalty")]
    SingularDesign { model: String },

    #[error("basis `{basis}` is rank deficient on the available trials ({usable} usable trials, dimension {dim})")]
    RankDeficient {
        basis: String,
        usable: usize,
        dim: usize,
    },

    #[error("Newton solver did not converge after {iterations} iterations (residual trace: {trace:?})")]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("corrupt or incompatible model blob: {0}")]
    Blob(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
