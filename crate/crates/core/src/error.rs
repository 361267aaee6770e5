//! Error type shared by all modules.

use thiserror::Error;

/// Errors surfaced by lattice geometry, path handling, simulation and
/// estimation routines.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A site was looked up in a configuration that does not carry it.
    #[error("site {site} is not in the support ({context})")]
    MissingSite { site: String, context: String },

    /// Coordinate tuples of different lengths were mixed.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two path collections live on different time grids.
    #[error("time grid mismatch: {left} vs {right} steps")]
    GridMismatch { left: usize, right: usize },

    /// Concatenation of configurations with a common site.
    #[error("overlapping supports: site {site} appears on both sides")]
    OverlappingSupport { site: String },

    /// A grid index was outside `0..=steps`.
    #[error("grid index {index} out of range (grid has {steps} steps)")]
    IndexOutOfRange { index: usize, steps: usize },

    /// A state or weight became NaN or infinite.
    #[error("non-finite value at site {site}, step {step}: {what}")]
    NonFinite { site: String, step: usize, what: String },

    /// A constructor argument was rejected.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation needed more replicas than the ensemble holds.
    #[error("not enough replicas: need {needed}, have {available}")]
    InsufficientReplicas { needed: usize, available: usize },

    /// Density-based estimators require an initial law with a density.
    #[error("initial law `{0}` has no density with respect to the standard Gaussian")]
    NoDensity(String),

    /// A local observable does not fit inside the volume it is evaluated on.
    #[error("observable support does not fit: {0}")]
    SupportTooLarge(String),

    /// I/O error while reading or writing path data.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV or JSON payload.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
