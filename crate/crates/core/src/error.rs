use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] qtensor::TensorError),
    #[error("unknown vocabulary token {0}")]
    UnknownToken(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("scene generation: {0}")]
    Scene(String),
    #[error("{0}")]
    Invalid(String),
    #[error("dataset record {record}: {message}")]
    Dataset { record: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
