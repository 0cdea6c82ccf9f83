use thiserror::Error;

/// Errors raised by the guide-space library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid guide-space dimensions: need d ≥ N (got d = {dim}, N = {num_forgery})")]
    DimensionTooSmall { dim: usize, num_forgery: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}, gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        grad_norm: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("domain {0} has no assigned guide embedding")]
    UnassignedDomain(usize),

    #[error("degenerate mean for domain {0}: averaged feature has vanishing norm")]
    DegenerateMean(usize),

    #[error("AUC is undefined for a split containing a single class")]
    SingleClass,

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
