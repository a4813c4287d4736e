use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke an operation's precondition (shapes, fingerprints, bijections).
    #[error("contract violated: {0}")]
    Contract(String),

    /// Numerical failure: singular systems, rank-deficient fits, NaN losses.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing artifact {path}: run `{step}` first")]
    MissingArtifact { path: PathBuf, step: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
