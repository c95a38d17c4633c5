//! Second-level decompositions: Shapley attribution of the total
//! agent-specific effect over agents, and variance-based attribution of the
//! reverse state-specific effect over state variables.

mod icc;
mod shapley;

pub use icc::{
    conditional_variance, find_icc_spike, r_sse_icc, CondBoundary, IccParams, IccReport,
};
pub use shapley::{
    shapley_exact, shapley_sampled, AseCharacteristic, Characteristic, ShapleyMode, ShapleyReport,
    TableCharacteristic, DEFAULT_EXACT_CAP,
};
