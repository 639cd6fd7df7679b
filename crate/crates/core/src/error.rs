use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("content too long: url alone is {tokens} tokens (limit {limit})")]
    ContentTooLong { tokens: usize, limit: usize },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },

    #[error("stale artifact {path}: {reason} (rerun `{producer}` or pass --force)")]
    StaleArtifact {
        path: PathBuf,
        reason: String,
        producer: &'static str,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("artifact directory is locked by another process ({0})")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
