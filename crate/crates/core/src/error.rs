//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),

    #[error("invalid call to `{tool}`: {reason}")]
    InvalidCall { tool: String, reason: String },

    #[error("`{tool}` called at step {step} before init_room")]
    Ordering { tool: String, step: usize },

    #[error("empty call list")]
    EmptyTrajectory,

    #[error("invalid instruction: {0}")]
    Instruction(String),

    #[error("encoding error in field `{field}`: {reason}")]
    Encode { field: String, reason: String },

    #[error("decoding error at position {position}: {reason}")]
    Decode { position: usize, reason: String },

    #[error("sequence of length {len} overflows the context window of {window}")]
    WindowOverflow { len: usize, window: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("stage `{stage}` cannot train on `{kind}` examples")]
    StageMismatch { stage: String, kind: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint vocabulary hash mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
