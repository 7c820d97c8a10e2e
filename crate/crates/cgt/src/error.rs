use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cgt_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("ingest failed: {0}")]
    Ingest(String),

    #[error(transparent)]
    Network(#[from] NetworkError),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
}

/// A failed request against a remote endpoint, after `retries` retries.
#[derive(Debug, thiserror::Error)]
#[error("request to {endpoint} failed after {retries} retries: {reason}")]
pub struct NetworkError {
    pub endpoint: String,
    pub retries: u32,
    pub status: Option<u16>,
    pub reason: String,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), message: message.into() }
    }

    /// The offending field, when the error names one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Invalid { field, .. } => Some(field),
            Error::Core(cgt_core::Error::Config { field, .. }) => Some(field),
            _ => None,
        }
    }

    /// Stable machine-readable code used by the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound(_) => "not_found",
            Error::Conflict(_) => "conflict",
            Error::Invalid { .. } | Error::Core(cgt_core::Error::Config { .. }) => "invalid_params",
            Error::Core(cgt_core::Error::UnknownThemes { .. }) => "unknown_themes",
            Error::Core(cgt_core::Error::Ledger(_)) => "ledger",
            Error::Core(_) => "domain",
            Error::Network(_) => "network",
            Error::Ingest(_) => "ingest",
            Error::Io { .. } | Error::Format { .. } => "storage",
        }
    }
}
