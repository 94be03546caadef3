use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: not found")]
    NotFound { path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Syntax or schema error with a best-effort location.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("{field}: unit declaration missing")]
    MissingUnit { field: String },

    #[error("{field}: unsupported unit {unit:?}")]
    UnsupportedUnit { field: String, unit: String },

    #[error("{location}: series length {found}, expected 12")]
    SeriesLength { location: String, found: usize },

    #[error("scenario failed validation: {0}")]
    Invalid(String),

    #[error("unknown year label {0:?}")]
    UnknownYear(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid weight: {0}")]
    Weight(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver failure: {0}")]
    Solver(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }
}
