//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, numerics, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent graph document (duplicate ids, dangling
    /// references, bad lengths, mismatched polylines, ...).
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A point coordinate outside the edge it refers to, or a reference to a
    /// node/edge that does not exist.
    #[error("invalid point: {0}")]
    InvalidPoint(String),

    /// Mesh construction failed (e.g. nonpositive target width).
    #[error("mesh error: {0}")]
    Mesh(String),

    /// A matrix factorization broke down (loss of positive definiteness,
    /// dimension mismatch, singular pivot).
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// The minimax rational approximation did not converge or was asked for
    /// an unsupported configuration.
    #[error("rational approximation failed: {0}")]
    Approximation(String),

    /// Invalid kernel/posterior parameters or an operation not supported by
    /// the chosen kernel family.
    #[error("kernel error: {0}")]
    Kernel(String),

    /// A problem size exceeded a guard intended to keep dense fallbacks at
    /// desk scale.
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    /// Invalid experiment or optimizer configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
