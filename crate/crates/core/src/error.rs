use std::io;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants fall in two classes: validation errors (bad inputs, malformed
/// files, inconsistent configuration) and numerical failures (divergence,
/// failed fits). [`Error::is_numerical`] tells them apart; the CLI maps the
/// first class to exit code 2 and the second to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid duration: {0}")]
    InvalidDuration(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("range configuration error: rejection rate {rate:.3} exceeds limit ({detail})")]
    RangeConfiguration { rate: f64, detail: String },

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("empty tranche: {0}")]
    EmptyTranche(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("format version mismatch: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("fit failed after restarts (best residual {best_residual:.3e}): {detail}")]
    FitFailure { best_residual: f64, detail: String },

    #[error("training diverged at {context}")]
    Divergence { context: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FitFailure { .. } | Error::Divergence { .. } | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
