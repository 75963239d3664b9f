use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("document {doc_id}: {message}")]
    Validation { doc_id: String, message: String },

    #[error("no external embedding for {doc_id} [{start}, {end})")]
    MissingEmbedding {
        doc_id: String,
        start: usize,
        end: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("labeled pool is empty")]
    EmptyPool,

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("span {0} was not processed during inference")]
    SpanNotInTrace(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("invalid clustering: {0}")]
    InvalidClustering(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
