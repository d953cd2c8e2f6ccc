use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {msg} (best residual {residual:.3e})")]
    Convergence { msg: String, residual: f64 },

    #[error("solver stalled: {0}")]
    Stall(String),

    #[error("multiplier search failed: {0}")]
    Search(String),

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("recentering diverged: {0}")]
    Recenter(String),

    #[error("algorithm failure: {0}")]
    AlgorithmFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
