//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum CfxError {
    /// A CPD lookup hit a parent assignment that was never materialized.
    #[error("no CPD row for {var} given parent assignment [{key}]")]
    MissingRow { var: String, key: String },

    /// A probability row failed validation.
    #[error("invalid probability row for {var}: {reason}")]
    InvalidRow { var: String, reason: String },

    /// Noise value outside [0, 1).
    #[error("noise value {value} for {var} outside [0, 1)")]
    NoiseOutOfRange { var: String, value: f64 },

    /// Noise vector does not cover every model variable.
    #[error("noise vector has {got} entries, model has {expected} variables")]
    IncompleteNoise { got: usize, expected: usize },

    /// Observed a value that has zero probability given its parents.
    #[error("abduction failed at {var}: observed '{label}' has zero probability given its parents")]
    Abduction { var: String, label: String },

    /// Counterfactual branch copy references form a cycle or dangling label.
    #[error("branch specs unresolvable: {0}")]
    BranchGraph(String),

    /// Exact oracle would exceed its layer-size cap.
    #[error("oracle infeasible: layer support {cells} exceeds cap {cap}")]
    OracleInfeasible { cells: usize, cap: usize },

    /// Model failed an observational consistency check.
    #[error("model inconsistent: {0}")]
    Inconsistent(String),

    /// Bad query, spec, config file or CLI argument.
    #[error("invalid input: {0}")]
    Config(String),

    /// Text fixture or JSON document failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    /// Fixture reward audit mismatch.
    #[error("reward audit failed at step {step}: {reason}")]
    Audit { step: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, CfxError>;
