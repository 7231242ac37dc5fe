use thiserror::Error;

/// Errors produced by kernel construction, convolution and verification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The requested convolution has no orthogonal kernel in this construction
    /// (for instance `stride > kernel_size`, or a single-channel BCOP factor).
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("channel incompatibility: {0}")]
    Incompatible(String),

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dense matrix of {rows}x{cols} exceeds the budget of {budget} entries")]
    Budget {
        rows: usize,
        cols: usize,
        budget: usize,
    },

    #[error("kernel file format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
