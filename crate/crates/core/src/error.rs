use thiserror::Error;

/// Errors produced by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("loss is not evaluable in this mode: {0}")]
    NotEvaluable(String),

    #[error("downstream feature {j_star} is not learned by the model")]
    FeatureNotLearned { j_star: usize },

    #[error("representations are not linearly separable (best margin found {best_margin:.3e})")]
    NonSeparable { best_margin: f64 },

    #[error("training diverged at step {step} (loss {loss:.3e})")]
    Divergence { step: usize, loss: f64 },

    #[error("retry budget of {attempts} attempts exhausted: {what}")]
    RetryBudgetExhausted { attempts: usize, what: String },

    #[error("{0}")]
    Empty(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
