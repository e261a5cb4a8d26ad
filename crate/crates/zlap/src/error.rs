//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong while loading data, building graphs or
/// solving propagation systems.
#[derive(Debug, Error)]
pub enum Error {
    /// File carries the wrong magic bytes or an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// File payload shorter or longer than its header promises.
    #[error("size error: {0}")]
    Size(String),

    /// Content is syntactically valid but semantically broken (non-finite
    /// values, out-of-range indices, negative degrees, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Dimensions of two inputs do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input is structurally fine but carries no usable signal (zero rows
    /// before normalization, constant value ranges, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    Empty(String),

    /// A hyperparameter is outside its documented range.
    #[error("invalid config: {0}")]
    Config(String),

    /// Deliberate size cap exceeded (dense oracles refuse large systems).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Arithmetic broke down mid-solve.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
