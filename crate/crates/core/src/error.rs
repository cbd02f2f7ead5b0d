use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be read or a record could not be parsed.
    #[error("load error: {0}")]
    Load(String),

    /// Input parsed but violates a domain invariant (score range, empty document, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Inconsistent or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    /// Kappa is undefined because every true and predicted label is the same value.
    #[error("undefined kappa: {0}")]
    UndefinedKappa(String),

    /// Non-finite numbers or shape mismatches inside a computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Load(_) => "E_LOAD",
            Error::Validation(_) => "E_VALIDATION",
            Error::Config(_) => "E_CONFIG",
            Error::Training(_) => "E_TRAINING",
            Error::UndefinedKappa(_) => "E_KAPPA_UNDEFINED",
            Error::Numerical(_) => "E_NUMERICAL",
            Error::Internal(_) => "E_INTERNAL",
            Error::Io { .. } => "E_IO",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Load(_) => 2,
            Error::Validation(_) => 3,
            Error::Config(_) => 4,
            Error::Training(_) => 5,
            Error::UndefinedKappa(_) => 6,
            Error::Numerical(_) => 7,
            Error::Internal(_) => 8,
            Error::Io { .. } => 9,
        }
    }
}
