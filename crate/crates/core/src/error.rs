use thiserror::Error;

/// Errors surfaced by the navigation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("infeasible world configuration: {0}")]
    Infeasible(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("architecture mismatch: checkpoint has {found}, expected {expected}")]
    Architecture { expected: String, found: String },

    #[error("protocol error: {reason} (line: {line:?})")]
    Protocol { reason: String, line: String },

    #[error("retraining failed after {steps} steps")]
    RetrainFailed { steps: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} must be finite")))
    }
}
