use thiserror::Error;

/// Errors produced by the particle solver and its oracles.
#[derive(Debug, Error)]
pub enum OtError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "numerical blow-up at iteration {iter}: non-finite particle position \
         (dt = {dt}, lambda = {lambda}, tau = {tau}); largest displacement before failure {max_displacement:.3e}"
    )]
    BlowUp {
        iter: usize,
        dt: f64,
        lambda: f64,
        tau: String,
        max_displacement: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

pub type Result<T> = std::result::Result<T, OtError>;

pub(crate) fn invalid(msg: impl Into<String>) -> OtError {
    OtError::InvalidInput(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(OtError::DimensionMismatch { expected, got })
    }
}
