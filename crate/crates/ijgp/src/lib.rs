//! Belief-network inference by message passing over join-graphs.
//!
//! The crate provides a dense factor algebra ([`factor`]), a belief-network
//! model with a text format ([`network`]), elimination orderings and
//! mini-bucket based join-graph construction ([`ordering`], [`structuring`],
//! [`joingraph`]), exact bucket elimination ([`elimination`]), the iterative
//! join-graph propagation engine together with the IBP and mini-clustering
//! baselines ([`propagation`]), seeded benchmark generators ([`generators`]),
//! accuracy metrics ([`metrics`]) and a benchmark harness ([`harness`])
//! driving the `ijgp` CLI.

pub mod elimination;
pub mod factor;
pub mod generators;
pub mod harness;
pub mod joingraph;
pub mod metrics;
pub mod network;
pub mod ordering;
pub mod propagation;
pub mod structuring;

#[cfg(test)]
pub(crate) mod testnets;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two factors disagree on the cardinality of a shared variable.
    #[error("cardinality mismatch for variable {var}: {left} vs {right}")]
    CardinalityMismatch { var: usize, left: usize, right: usize },

    /// All probability mass vanished, typically because the evidence has
    /// probability zero under the model.
    #[error("inconsistent evidence: zero probability mass")]
    InconsistentEvidence,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    /// An elimination step would materialize a table above the configured cap.
    #[error("width guard exceeded: table of {entries} entries over cap {cap}")]
    WidthGuard { entries: usize, cap: usize },

    #[error("metric input shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
