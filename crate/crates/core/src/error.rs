use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row} of the transition kernel has zero mass")]
    ZeroRow { row: usize },

    #[error("column {column} of the kernel has zero mass")]
    ZeroColumn { column: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid label {value}: {reason}")]
    InvalidLabel { value: f64, reason: &'static str },

    #[error("link function overflow at logit {logit}")]
    Overflow { logit: f64 },

    #[error("derivative of the link function is not finite at logit {logit}")]
    UnboundedDerivative { logit: f64 },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("matrix is singular ({context})")]
    Singular { context: &'static str },

    #[error("weights diverged at step {step} (norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("assumption violated ({assumption}): {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by the caller's inputs rather than by numerics.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidLabel { .. }
                | Error::Assumption { .. }
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Io(_)
        )
    }
}
