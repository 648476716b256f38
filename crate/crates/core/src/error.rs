use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error type shared by every module of the crate.
///
/// [`Error::class`] groups the variants into the three failure classes the
/// command line reports through its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} at byte offset {offset}")]
    Edf { offset: usize, what: String },

    #[error("EDF header declares {declared} header bytes but {n_signals} signals require {expected}")]
    HeaderBytes {
        declared: usize,
        expected: usize,
        n_signals: usize,
    },

    #[error("calibration error for signal '{label}': {what}")]
    Calibration { label: String, what: String },

    #[error("field '{field}' is {len} bytes, exceeds fixed width {width}")]
    FieldWidth {
        field: &'static str,
        len: usize,
        width: usize,
    },

    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("backward called on {0}")]
    Backward(&'static str),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Shape { .. }
            | Error::NonFinite { .. }
            | Error::Backward(_)
            | Error::ParamMismatch(_)
            | Error::Invariant(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn edf(offset: usize, what: impl Into<String>) -> Self {
        Error::Edf {
            offset,
            what: what.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
