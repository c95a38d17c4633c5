//! Counterfactual effect estimators.
//!
//! All estimators condition on a factual trajectory and measure expected
//! changes of a scalar response under interventions on one action:
//!
//! * `tcfe` — total counterfactual effect of `do(a)`.
//! * `ase_subset` — the part of the effect that propagates only through the
//!   subsequent actions of a chosen set of agents, all other actions pinned
//!   to their factual values.
//! * `tot_ase` — `ase_subset` with every agent in the set.
//! * `sse` — the part propagating only through state transitions: `do(a)`
//!   with all subsequent actions pinned to factual values.
//! * `r_sse` — the reverse state-specific effect: the difference between
//!   the natural-intervention world (subsequent actions grafted from the
//!   `do(a)` world, the intervened action left natural) and the `do(a)`
//!   world itself.
//!
//! Every estimate in one call shares the same posterior noise draws, which
//! makes the identity `tcfe = tot_ase - r_sse` hold per sample up to float
//! rounding rather than only in expectation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CfxError, Result};
use crate::inference::{
    abduct, do_action, resolve_branch_order, sample_posterior, solve_branches, BranchSpec,
};
use crate::scm::{InterventionSet, ScmModel, Trajectory, VarId};
use crate::stats::{mean_and_se, neumaier_sum};

/// Scalar functional of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    /// Numeric value of one state variable (via the model's value table).
    StateVariable(VarId),
    /// Discounted sum of state values over `from..=to`, discount anchored
    /// at `from`.
    Return { gamma: f64, from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpec {
    pub kind: ResponseKind,
}

impl ResponseSpec {
    pub fn new(kind: ResponseKind) -> ResponseSpec {
        ResponseSpec { kind }
    }

    pub fn state(var: VarId) -> ResponseSpec {
        ResponseSpec::new(ResponseKind::StateVariable(var))
    }

    pub fn ret(gamma: f64, from: usize, to: usize) -> ResponseSpec {
        ResponseSpec::new(ResponseKind::Return { gamma, from, to })
    }

    /// Last timestep that can influence the response.
    pub fn last_time(&self) -> usize {
        match self.kind {
            ResponseKind::StateVariable(v) => v.time(),
            ResponseKind::Return { to, .. } => to,
        }
    }

    fn validate(&self, model: &ScmModel) -> Result<()> {
        match self.kind {
            ResponseKind::StateVariable(v) => {
                let idx = model.index_of(v)?;
                if model.value_table(idx).is_none() {
                    return Err(CfxError::Config(format!(
                        "response variable {v} has no value table"
                    )));
                }
            }
            ResponseKind::Return { gamma, from, to } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(CfxError::Config(format!("discount {gamma} outside (0, 1]")));
                }
                if from > to || to > model.horizon() {
                    return Err(CfxError::Config(format!(
                        "return window {from}..{to} outside horizon {}",
                        model.horizon()
                    )));
                }
                for k in from..=to {
                    let idx = model.index_of(VarId::state(k))?;
                    if model.value_table(idx).is_none() {
                        return Err(CfxError::Config(format!(
                            "state S{k} in return window has no value table"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Evaluate a response on a solved trajectory.
pub fn eval_response(model: &ScmModel, tau: &Trajectory, spec: &ResponseSpec) -> Result<f64> {
    match spec.kind {
        ResponseKind::StateVariable(v) => {
            let idx = model.index_of(v)?;
            model.value_of(idx, tau.cat(idx))
        }
        ResponseKind::Return { gamma, from, to } => {
            let mut total = 0.0;
            let mut disc = 1.0;
            for k in from..=to {
                let idx = model.index_of(VarId::state(k))?;
                total += disc * model.value_of(idx, tau.cat(idx))?;
                disc *= gamma;
            }
            Ok(total)
        }
    }
}

/// The tuple every estimator consumes: the factual trajectory, the action
/// variable under intervention, the alternative value and the response.
#[derive(Debug, Clone)]
pub struct EffectQuery {
    pub tau: Trajectory,
    pub agent: usize,
    pub time: usize,
    /// Alternative action (canonical category index).
    pub action: u32,
    /// Factual action, always `tau(A_{agent,time})`.
    pub reference: u32,
    pub response: ResponseSpec,
}

impl EffectQuery {
    pub fn new(
        model: &ScmModel,
        tau: &Trajectory,
        agent: usize,
        time: usize,
        action: u32,
        response: ResponseSpec,
    ) -> Result<EffectQuery> {
        let idx = model.index_of(VarId::action(agent, time))?;
        if action as usize >= model.cpd(idx).domain().len() {
            return Err(CfxError::Config(format!(
                "alternative action {action} outside domain of A{agent}t{time}"
            )));
        }
        response.validate(model)?;
        if response.last_time() <= time {
            return Err(CfxError::Config(format!(
                "response ends at t={} but the intervention is at t={time}",
                response.last_time()
            )));
        }
        Ok(EffectQuery {
            tau: tau.clone(),
            agent,
            time,
            action,
            reference: tau.cat(idx),
            response,
        })
    }

    pub fn new_by_label(
        model: &ScmModel,
        tau: &Trajectory,
        agent: usize,
        time: usize,
        action_label: &str,
        response: ResponseSpec,
    ) -> Result<EffectQuery> {
        let idx = model.index_of(VarId::action(agent, time))?;
        let action = model.cpd(idx).index_of_label(action_label).ok_or_else(|| {
            CfxError::Config(format!(
                "action '{action_label}' not in domain of A{agent}t{time}"
            ))
        })?;
        EffectQuery::new(model, tau, agent, time, action, response)
    }

    /// Factual response value τ(Y).
    pub fn factual_response(&self, model: &ScmModel) -> Result<f64> {
        eval_response(model, &self.tau, &self.response)
    }

    pub fn is_null(&self) -> bool {
        self.action == self.reference
    }
}

/// A Monte Carlo effect estimate.
#[derive(Debug, Clone, Serialize)]
pub struct EffectEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<f64>>,
}

impl EffectEstimate {
    pub fn from_samples(values: Vec<f64>, keep: bool) -> EffectEstimate {
        let (mean, std_error) = mean_and_se(&values);
        EffectEstimate {
            mean,
            std_error,
            n_samples: values.len(),
            per_sample: keep.then_some(values),
        }
    }

    /// An analytically-zero estimate (no sampling performed).
    pub fn exact_zero() -> EffectEstimate {
        EffectEstimate {
            mean: 0.0,
            std_error: 0.0,
            n_samples: 0,
            per_sample: None,
        }
    }
}

/// Branch labels used by the estimators.
pub const BRANCH_DO: &str = "do";
pub const BRANCH_NATURAL: &str = "natural";
pub const BRANCH_PINNED: &str = "pinned";

/// `do(a)` branch: the hard intervention alone.
pub fn branch_do(model: &ScmModel, query: &EffectQuery) -> Result<BranchSpec> {
    Ok(BranchSpec::plain(
        BRANCH_DO,
        do_action(model, query.agent, query.time, query.action)?,
    ))
}

/// Natural-intervention branch for a set of effect agents: actions of
/// agents in the set after the intervention time are grafted from the
/// `do(a)` branch, actions of all other agents are pinned to their factual
/// values, and the intervened action itself stays natural.
pub fn branch_ase(model: &ScmModel, query: &EffectQuery, effect_agents: u32) -> Result<BranchSpec> {
    let mut hard = InterventionSet::empty();
    for i in 0..model.n_vars() {
        let var = model.var(i);
        if let VarId::Action { agent, time } = var {
            if time > query.time && effect_agents & (1 << (agent - 1)) == 0 {
                hard.fix(model, var, query.tau.cat(i))?;
            }
        }
    }
    Ok(BranchSpec::copying(
        BRANCH_NATURAL,
        hard,
        BRANCH_DO,
        query.time,
    ))
}

/// State-path branch: `do(a)` with every subsequent action of every agent
/// pinned to its factual value.
pub fn branch_sse(model: &ScmModel, query: &EffectQuery) -> Result<BranchSpec> {
    let mut hard = do_action(model, query.agent, query.time, query.action)?;
    for i in 0..model.n_vars() {
        let var = model.var(i);
        if let VarId::Action { time, .. } = var {
            if time > query.time {
                hard.fix(model, var, query.tau.cat(i))?;
            }
        }
    }
    Ok(BranchSpec::plain(BRANCH_PINNED, hard))
}

pub fn full_agent_set(model: &ScmModel) -> u32 {
    (1u32 << model.n_agents()) - 1
}

/// Per-branch response values over `n` shared posterior draws.
/// Sample `j` of every branch is solved on the identical noise vector, and
/// results are collected in sample order so aggregation is independent of
/// the rayon worker layout.
pub fn branch_responses(
    model: &ScmModel,
    query: &EffectQuery,
    branches: &[BranchSpec],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let posterior = abduct(model, &query.tau)?;
    let order = resolve_branch_order(branches)?;
    let per_sample: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let u = sample_posterior(&posterior, seed, j as u64);
            let solved = solve_branches(model, &u, branches, &order)?;
            solved
                .iter()
                .map(|t| eval_response(model, t, &query.response))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    // Transpose to [branch][sample].
    let mut out = vec![Vec::with_capacity(n_samples); branches.len()];
    for row in per_sample {
        for (b, v) in row.into_iter().enumerate() {
            out[b].push(v);
        }
    }
    Ok(out)
}

fn difference_estimate(a: &[f64], b: &[f64], keep: bool) -> EffectEstimate {
    let values: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    EffectEstimate::from_samples(values, keep)
}

fn shifted_estimate(a: &[f64], shift: f64, keep: bool) -> EffectEstimate {
    let values: Vec<f64> = a.iter().map(|&x| x - shift).collect();
    EffectEstimate::from_samples(values, keep)
}

/// Total counterfactual effect: `E[Y_a | tau] - tau(Y)`.
pub fn tcfe(
    model: &ScmModel,
    query: &EffectQuery,
    n_samples: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    if query.is_null() {
        return Ok(EffectEstimate::exact_zero());
    }
    let branches = vec![branch_do(model, query)?];
    let resp = branch_responses(model, query, &branches, n_samples, seed)?;
    Ok(shifted_estimate(
        &resp[0],
        query.factual_response(model)?,
        false,
    ))
}

/// Effect through the subsequent actions of the agents in `effect_agents`
/// (bitmask, bit i-1 = agent i). The empty set is analytically zero: with
/// no grafted actions and everything else pinned to factual values, every
/// branch reproduces the factual trajectory.
pub fn ase_subset(
    model: &ScmModel,
    query: &EffectQuery,
    effect_agents: u32,
    n_samples: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    if effect_agents == 0 || query.is_null() {
        return Ok(EffectEstimate::exact_zero());
    }
    let branches = vec![branch_do(model, query)?, branch_ase(model, query, effect_agents)?];
    let resp = branch_responses(model, query, &branches, n_samples, seed)?;
    Ok(shifted_estimate(
        &resp[1],
        query.factual_response(model)?,
        false,
    ))
}

/// Total agent-specific effect: `ase_subset` over all agents.
pub fn tot_ase(
    model: &ScmModel,
    query: &EffectQuery,
    n_samples: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    ase_subset(model, query, full_agent_set(model), n_samples, seed)
}

/// State-specific effect: `do(a)` with subsequent actions pinned to
/// factual values, minus `tau(Y)`.
pub fn sse(
    model: &ScmModel,
    query: &EffectQuery,
    n_samples: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    if query.is_null() {
        return Ok(EffectEstimate::exact_zero());
    }
    let branches = vec![branch_sse(model, query)?];
    let resp = branch_responses(model, query, &branches, n_samples, seed)?;
    Ok(shifted_estimate(
        &resp[0],
        query.factual_response(model)?,
        false,
    ))
}

/// Reverse state-specific effect: response of the natural-intervention
/// branch minus response of the `do(a)` branch, per draw.
pub fn r_sse(
    model: &ScmModel,
    query: &EffectQuery,
    n_samples: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    if query.is_null() {
        return Ok(EffectEstimate::exact_zero());
    }
    let branches = vec![
        branch_do(model, query)?,
        branch_ase(model, query, full_agent_set(model))?,
    ];
    let resp = branch_responses(model, query, &branches, n_samples, seed)?;
    Ok(difference_estimate(&resp[1], &resp[0], false))
}

/// The three effects of the decomposition identity computed on shared
/// draws, with the per-sample and aggregate residual of
/// `tcfe = tot_ase - r_sse`.
#[derive(Debug, Clone, Serialize)]
pub struct ExplanationReport {
    pub tcfe: EffectEstimate,
    pub tot_ase: EffectEstimate,
    pub r_sse: EffectEstimate,
    /// |tcfe - (tot_ase - r_sse)| on the aggregate means.
    pub identity_residual: f64,
    /// Largest per-sample residual.
    pub max_sample_residual: f64,
    /// tot_ase and -r_sse as percentage shares of tcfe (when tcfe != 0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shares: Option<(f64, f64)>,
}

pub fn explanation_formula(
    model: &ScmModel,
    query: &EffectQuery,
    n_samples: usize,
    seed: u64,
    keep_samples: bool,
) -> Result<ExplanationReport> {
    if query.is_null() {
        return Ok(ExplanationReport {
            tcfe: EffectEstimate::exact_zero(),
            tot_ase: EffectEstimate::exact_zero(),
            r_sse: EffectEstimate::exact_zero(),
            identity_residual: 0.0,
            max_sample_residual: 0.0,
            shares: None,
        });
    }
    let branches = vec![
        branch_do(model, query)?,
        branch_ase(model, query, full_agent_set(model))?,
    ];
    let resp = branch_responses(model, query, &branches, n_samples, seed)?;
    let y_fact = query.factual_response(model)?;
    let tcfe_vals: Vec<f64> = resp[0].iter().map(|&y| y - y_fact).collect();
    let ase_vals: Vec<f64> = resp[1].iter().map(|&y| y - y_fact).collect();
    let rsse_vals: Vec<f64> = resp[1].iter().zip(&resp[0]).map(|(&yi, &ya)| yi - ya).collect();
    let max_sample_residual = tcfe_vals
        .iter()
        .zip(&ase_vals)
        .zip(&rsse_vals)
        .map(|((&t, &a), &r)| (t - (a - r)).abs())
        .fold(0.0f64, f64::max);
    let tcfe = EffectEstimate::from_samples(tcfe_vals, keep_samples);
    let tot_ase = EffectEstimate::from_samples(ase_vals, keep_samples);
    let r_sse = EffectEstimate::from_samples(rsse_vals, keep_samples);
    let identity_residual = (tcfe.mean - (tot_ase.mean - r_sse.mean)).abs();
    let shares = (tcfe.mean != 0.0).then(|| {
        (
            100.0 * tot_ase.mean / tcfe.mean,
            100.0 * (-r_sse.mean) / tcfe.mean,
        )
    });
    Ok(ExplanationReport {
        tcfe,
        tot_ase,
        r_sse,
        identity_residual,
        max_sample_residual,
        shares,
    })
}

/// Mean of per-sample values, compensated.
pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    neumaier_sum(values.iter().copied()) / values.len() as f64
}
