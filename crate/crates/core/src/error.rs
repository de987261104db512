use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material parameters: {0}")]
    Params(String),

    #[error("grid geometry: {0}")]
    Geometry(String),

    #[error("boundary contract violated: {0}")]
    Boundary(String),

    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e}): {reason}")]
    NoConvergence { iterations: usize, residual: f64, reason: String, trace: Vec<f64> },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("gradient flow blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("campaign failed: {0}")]
    Campaign(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
