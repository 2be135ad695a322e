use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what} has {size} entries, above the cap of {cap}; {advice}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
        advice: &'static str,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no convergence after {iterations} iterations: {detail}")]
    NotConverged { iterations: usize, detail: String },
    #[error("{failed} of {total} subset tasks failed\n{report}")]
    SubsetFailures {
        failed: usize,
        total: usize,
        report: String,
        numerical: bool,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NotConverged { .. } => 3,
            Error::SubsetFailures { numerical: true, .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
