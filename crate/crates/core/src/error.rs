use thiserror::Error;

/// Errors raised across the crate.
///
/// Structural errors cover shape and configuration problems; numerical
/// errors cover non-convergence, singular systems and non-finite values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range [0, {bound})")]
    OutOfRange { index: usize, bound: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("SVD did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by bad inputs or configuration rather than by
    /// the computation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Shape(_) | Error::Config(_) | Error::OutOfRange { .. } | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
