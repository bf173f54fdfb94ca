use thiserror::Error;

/// Unified error type for the engine.
///
/// Variants map one-to-one onto the CLI exit-code families: `Config` -> 2,
/// `Data` -> 3, `Numeric` -> 4, everything else -> 5.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor geometry violation. The message names the offending dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value or malformed config file.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset missing, malformed, or inconsistent with the model.
    #[error("data error: {0}")]
    Data(String),

    /// A loss or gradient became non-finite; the message names the term.
    #[error("numeric divergence: {0}")]
    Numeric(String),

    /// Malformed or truncated checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Broken internal invariant; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 0 ok, 2 config, 3 data, 4 numeric, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            _ => 5,
        }
    }
}
