use thiserror::Error;

/// Errors produced by the simulation and pricing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("series did not converge within {terms} terms ({what})")]
    NoConvergence { what: &'static str, terms: usize },

    #[error("diffusion exponent gamma = 2 is not covered by the drift classification")]
    GammaTwo,

    #[error("function evaluation failed at x = {x}: {reason}")]
    Evaluation { x: f64, reason: String },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("Laplace inversion diagnostic failed: relative disagreement {rel_diff:e} at (y = {y}, v = {v})")]
    InversionDiagnostic { rel_diff: f64, y: f64, v: f64 },

    #[error("density grid covers only {mass:.6} of the probability mass")]
    Coverage { mass: f64 },

    #[error("Wishart SDE has no solution guarantee: {0}")]
    Existence(String),

    #[error("MLMC did not meet the bias criterion by level {max_level}")]
    MlmcNotConverged {
        max_level: usize,
        levels: Vec<crate::mlmc::LevelStats>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
