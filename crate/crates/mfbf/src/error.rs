use thiserror::Error;

/// Errors produced by the library and CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A control or parameter violates the plant's stated bounds.
    #[error("bounds violation: {0}")]
    BoundsViolation(String),

    /// A configuration value is inconsistent or out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An action set was constructed from an empty choice list.
    #[error("empty action set")]
    EmptyActionSet,

    /// A dataset or model input had the wrong dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Training data is empty or contains non-finite values.
    #[error("invalid training data: {0}")]
    InvalidData(String),

    /// A named scenario is not known.
    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    /// Checkpoint or dataset file could not be parsed.
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: validation problems exit 2,
    /// runtime failures exit 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BoundsViolation(_)
            | Error::InvalidConfig(_)
            | Error::EmptyActionSet
            | Error::DimensionMismatch(_)
            | Error::UnknownScenario(_) => 2,
            _ => 1,
        }
    }
}
