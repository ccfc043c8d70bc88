use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI prints these as a single `error[<kind>]: <message>` line, so every
/// variant has a stable short kind name (see [`Error::kind`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown width {0}")]
    UnknownWidth(f64),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("ill-conditioned matrix (condition estimate {condition:.3e}): {context}")]
    IllConditioned { condition: f64, context: String },

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::UnknownWidth(_) => "unknown-width",
            Error::InvalidState(_) => "invalid-state",
            Error::IllConditioned { .. } => "ill-conditioned",
            Error::NotImplemented(_) => "not-implemented",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
