//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlagsError {
    /// Shape disagreement between tensors or layers.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A caller-side contract was violated (non-unit key, empty positives, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// exp argument large enough to overflow f64.
    #[error("exp overflow: argument {0} exceeds 700")]
    Overflow(f64),

    /// A vector too close to zero to normalize or compare by cosine.
    #[error("degenerate vector: {0}")]
    Degenerate(String),

    /// Dataset or manifest referential-integrity failure.
    #[error("data integrity error: {0}")]
    Integrity(String),

    /// A class too small for pair mining.
    #[error("insufficient class size: {0}")]
    ClassSize(String),

    /// Train/eval split left a class without training samples.
    #[error("split error: {0}")]
    Split(String),

    /// The finite-difference oracle hit a non-finite evaluation.
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlagsError>;

impl FlagsError {
    /// Process exit code for the CLI: 2 config, 3 data/manifest, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            FlagsError::Config(_) => 2,
            FlagsError::Integrity(_) | FlagsError::ClassSize(_) | FlagsError::Split(_) => 3,
            FlagsError::Overflow(_) | FlagsError::Degenerate(_) => 4,
            FlagsError::Dimension { .. } | FlagsError::Contract(_) | FlagsError::Oracle(_) => 4,
            FlagsError::Io(_) | FlagsError::Json(_) => 3,
        }
    }
}
