use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}, column `{column}`: cannot read {value:?} as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("validation error at line {line}: {message}")]
    Validation { line: u64, message: String },
    #[error("species `{0}` has no control observations")]
    NoControl(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("unstable fit: {failed} of {total} bootstrap resamples failed ({:.1}%)", 100.0 * *failed as f64 / *total as f64)]
    UnstableFit { failed: usize, total: usize },
    #[error("initialization error: non-finite log-posterior in {0}")]
    Initialization(String),
    #[error("undefined diagnostic: {0}")]
    UndefinedDiagnostic(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("convergence gate failed: {0}")]
    ConvergenceGate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
