//! Counterfactual effect decomposition for multi-agent sequential decision
//! making.
//!
//! The crate models an n-agent MDP together with a joint policy as a
//! categorical structural causal model with one independent uniform noise
//! term per variable, then answers "how much of the counterfactual effect
//! of doing `a` instead of what happened flows through the agents, and how
//! much through the environment?":
//!
//! * [`scm`] — categorical SCMs with inverse-CDF structural functions,
//!   deterministic solving under interventions, noise-monotonicity checks.
//! * [`mmdp`] — compile an MDP spec + joint policy into an SCM and verify
//!   observational consistency.
//! * [`inference`] — abduction, posterior sampling and counterfactual
//!   branch evaluation under shared noise.
//! * [`oracle`] — exact joint counterfactual distributions for small models
//!   via comonotone-coupling dynamic programming.
//! * [`effects`] — TCFE, agent-specific, state-specific and reverse
//!   state-specific effect estimators and the decomposition identity.
//! * [`attribution`] — Shapley attribution of the total agent-specific
//!   effect and variance-based attribution of the reverse state-specific
//!   effect over state variables.
//! * [`env`] — reference environments: a planner/actor gridworld and a
//!   sepsis-style treatment simulator, plus trajectory replay fixtures.
//! * [`model_io`] — JSON file formats for models, MDP specs and
//!   trajectories.
//! * [`synthetic`] — seeded random models for validation suites.

pub mod attribution;
pub mod effects;
pub mod env;
pub mod error;
pub mod inference;
pub mod mmdp;
pub mod model_io;
pub mod oracle;
pub mod rng;
pub mod scm;
pub mod stats;
pub mod synthetic;

pub use error::{CfxError, Result};
pub use scm::{Cpd, InterventionSet, NoiseVector, ScmModel, Trajectory, VarId};
