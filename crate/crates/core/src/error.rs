use thiserror::Error;

/// Errors produced by assembly, solvers, oracles and the scenario layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A solver hit its iteration budget. Carries the last iterate so callers
    /// can inspect it, but it must never be used as a solution.
    #[error("{method} did not converge after {iterations} iterations (last update {last_update:.3e}, residual {residual_norm:.3e})")]
    NonConvergence {
        method: String,
        iterations: usize,
        last_update: f64,
        residual_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("separability iteration exceeded the bound cap at outer iteration {iteration}")]
    SeparabilityFailure { iteration: usize },

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
