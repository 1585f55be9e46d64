use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("schema violation{}: {message}", .dialogue.as_ref().map(|d| format!(" in dialogue {d}")).unwrap_or_default())]
    Schema {
        dialogue: Option<String>,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary hash mismatch: checkpoint has {expected}, corpus has {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}, slot {slot}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        slot: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(dialogue: Option<&str>, message: impl Into<String>) -> Self {
        Error::Schema {
            dialogue: dialogue.map(str::to_owned),
            message: message.into(),
        }
    }
}
