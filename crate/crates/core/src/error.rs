use thiserror::Error;

use crate::net::BackupError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Backup(#[from] BackupError),

    #[error("embedding infeasible after {attempts} attempts: {reason}")]
    EmbeddingInfeasible { attempts: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {what}: {detail}")]
    NonFinite { what: String, detail: String },

    #[error("observation schema mismatch: checkpoint expects {expected}, environment provides {actual}")]
    SchemaMismatch { expected: String, actual: String },

    #[error("replay buffer holds {available} episodes, {needed} required")]
    ReplayUnderflow { available: usize, needed: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {detail}")]
    Format { path: String, detail: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, detail: impl ToString) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            detail: detail.to_string(),
        }
    }

    /// Configuration errors map to exit code 2, everything else to 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
