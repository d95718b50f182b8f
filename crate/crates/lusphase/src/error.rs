//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto exit codes:
//! configuration and input-validation problems exit with 1, runtime
//! failures (I/O mid-run, numeric divergence) exit with 2.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status the CLI reports for this error: 1 for validation
    /// problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Divergence { .. } | Error::State(_) => 2,
            Error::Format(_)
            | Error::Dimension(_)
            | Error::Parameter(_)
            | Error::Shape(_)
            | Error::Config(_)
            | Error::Domain(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
