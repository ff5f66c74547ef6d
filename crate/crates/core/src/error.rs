use std::path::PathBuf;

/// Errors produced anywhere in the quantization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: expected {expected} bytes, found {actual}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFinite { path: PathBuf, offset: usize },

    #[error("fold: {0}")]
    Fold(String),

    #[error("codebook: {0}")]
    Codebook(String),

    #[error("table: {0}")]
    Table(String),

    #[error("engine: {0}")]
    Engine(String),

    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
