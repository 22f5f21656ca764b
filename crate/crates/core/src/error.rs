use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing map: {0}")]
    MissingMap(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown category id {0}")]
    UnknownCategory(u64),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors traced to the caller's files or arguments; domain
    /// errors on validated data are internal faults.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Domain(_))
    }
}
