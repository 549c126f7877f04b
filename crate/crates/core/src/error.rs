use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A NaN or infinity appeared. `block` is the first offending block of a flow, if any.
    #[error("non-finite value in {context}{}", block.map(|b| format!(" (block {b})")).unwrap_or_default())]
    NonFinite { context: String, block: Option<usize> },

    #[error("{context} did not converge after {iters} iterations (last change {residual:e})")]
    NoConvergence { context: String, iters: usize, residual: f64 },

    #[error("matrix is singular ({0})")]
    Singular(String),

    /// A Lipschitz constant has no finite bound over the requested domain.
    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch { context: String, expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into(), block: None }
    }

    /// Attaches a flow block index to errors raised inside a single block.
    pub fn at_block(self, index: usize) -> Self {
        match self {
            Error::NonFinite { context, block: None } => Error::NonFinite { context, block: Some(index) },
            Error::NoConvergence { context, iters, residual } => Error::NoConvergence {
                context: format!("{context} (block {index})"),
                iters,
                residual,
            },
            other => other,
        }
    }

    pub fn is_non_finite(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }

    pub fn block(&self) -> Option<usize> {
        match self {
            Error::NonFinite { block, .. } => *block,
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context: context.to_string(), expected, got })
    }
}
