use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: &'static str, message: String },

    #[error("corpus build failed: {0}")]
    Build(String),

    #[error("{what} index {index} out of range (len {len})")]
    Index { what: &'static str, index: usize, len: usize },

    #[error("metric {metric} is undefined: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    #[error("model selection failed: {0}")]
    Selection(String),

    #[error("sweep failed: every K in the range failed")]
    Sweep,

    #[error("labelings reference unknown themes: {offenders:?}")]
    UnknownThemes { offenders: Vec<String> },

    #[error("ledger error: {0}")]
    Ledger(String),

    #[error("expansion failed for query {query:?}: {reason}")]
    Expansion { query: String, reason: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config { field, message: message.into() }
    }
}
