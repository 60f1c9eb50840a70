use thiserror::Error;

/// Parameter constraint violations, one variant per rule.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("dimension d = {0} must be at least 2")]
    Dimension(i64),
    #[error("removed block side a = {a} must satisfy 1 <= a < k = {k}")]
    BlockSide { k: i64, a: i64 },
    #[error("a + k = {sum} must be even so that (k - a)/2 is an integer")]
    Parity { sum: i64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid carpet parameters: {0}")]
    Params(#[from] ParamError),

    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("capacity exceeded: {requested} vertices requested, limit is {limit}")]
    Capacity { requested: u128, limit: u64 },

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("maximum principle violated at vertex {vertex}: {value} outside [{min}, {max}]")]
    MaxPrinciple {
        vertex: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("degenerate harmonic measure: h(y) = {value:e} at y = {y} for boundary vertex {boundary}")]
    Degenerate {
        boundary: usize,
        y: usize,
        value: f64,
    },

    #[error("hypothesis not met: {0}")]
    Hypothesis(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
