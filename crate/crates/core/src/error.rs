use thiserror::Error;

/// Errors produced anywhere in the evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coverage violation: behavior policy never takes action {action} in a state the target policy acts in (target prob {target_prob})")]
    CoverageViolation { action: usize, target_prob: f64 },

    #[error("{what} is singular or ill-conditioned (condition number {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible privacy budget: {0}")]
    Infeasible(String),

    #[error("iterate diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
