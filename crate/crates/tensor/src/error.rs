use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("softmax row {0} has every entry masked")]
    FullyMasked(usize),
    #[error("invalid additive mask: {0}")]
    InvalidMask(String),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for {len}")]
    Index { index: usize, len: usize },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
