use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants fall into two families: invalid input (bad shapes, out-of-range
/// parameters, malformed files) and numerical failure (singular systems,
/// overflow). [`Error::is_numerical`] tells them apart for exit-code mapping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("enumeration over 2^{d} masks exceeds the limit of 2^{limit}")]
    EnumerationTooLarge { d: usize, limit: usize },

    #[error("singular normal equations: pivot for column {column} ({name}) is {pivot:e}, below threshold {threshold:e}")]
    Singular {
        column: usize,
        name: String,
        pivot: f64,
        threshold: f64,
    },

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("model does not provide a gradient and finite differences are disabled")]
    GradientUnavailable,

    #[error("model evaluation failed: {0}")]
    Model(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Overflow(_) | Error::Model(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
