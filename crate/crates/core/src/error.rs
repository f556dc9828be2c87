use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cell {cell} has zero estimated volume with a nonzero shift")]
    DegenerateCell { cell: usize },

    #[error("cells {i} and {j} share an identical affine functional")]
    DegeneratePair { i: usize, j: usize },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("calibration did not converge after {iterations} iterations (residual {residual:.3e})")]
    Calibration {
        iterations: usize,
        residual: f64,
        offsets: Vec<f64>,
    },

    #[error("radius {r} does not exceed the required threshold {threshold}")]
    HypothesisNotMet { r: f64, threshold: f64 },

    #[error("insufficient precision: {0}")]
    Precision(String),

    #[error("table with {entries} entries exceeds capacity {limit}")]
    Capacity { entries: u128, limit: u128 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("kernel with stay probability {stay} and move probability {step} is not stochastic")]
    NonNormalizedKernel { stay: f64, step: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
