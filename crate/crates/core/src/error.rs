//! Error type shared across the crate.

use std::fmt;
use std::io;
use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// I/O failure with the path that was being touched.
    Io { path: PathBuf, source: io::Error },
    /// Malformed file contents; `offset` is the byte position where parsing gave up.
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },
    /// Structural validation failure (bundle manifests, corpus manifests).
    Validation(String),
    /// Invalid argument or dimension mismatch.
    Argument(String),
    /// Map with zero variance; z-score normalization is undefined.
    DegenerateMap(String),
    /// Every token of the word clustered to noise; no map can be selected.
    NoLocalizedToken,
    /// The embedding objective became non-finite at the given step.
    NonFiniteLoss { step: usize },
    /// A metric has no defined value for the given inputs.
    UndefinedMetric(String),
    /// Synthetic geometry could not be placed under the given constraints.
    Placement(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Format { path, offset, msg } => {
                write!(f, "format error in {} at byte {offset}: {msg}", path.display())
            }
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DegenerateMap(msg) => write!(f, "degenerate map: {msg}"),
            Error::NoLocalizedToken => {
                write!(f, "no localized token: every token clustered to noise")
            }
            Error::NonFiniteLoss { step } => {
                write!(f, "non-finite loss at optimization step {step}")
            }
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Placement(msg) => write!(f, "placement failed: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}
