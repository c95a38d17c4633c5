//! Reference environments: a planner/actor gridworld and a sepsis-style
//! two-agent treatment simulator, plus trajectory replay fixtures.

pub mod gridworld;
pub mod replay;
pub mod sepsis;

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{CfxError, Result};
use crate::mmdp::{DeviationSet, MmdpSpec, PolicySet};

/// Environment dynamics in structured form. `assemble` enumerates the
/// reachable state space and materializes the MDP spec, policies and
/// deviation set that `mmdp::compile` consumes.
///
/// States must be `Ord`: their sort order becomes the declaration (and thus
/// noise-monotonicity) ordering of the compiled state domain.
pub(crate) trait Dynamics {
    type State: Clone + Ord + std::fmt::Debug;

    fn n_agents(&self) -> usize;
    fn horizon(&self) -> usize;
    fn action_labels(&self, agent: usize) -> Vec<String>;
    fn label(&self, s: &Self::State) -> String;
    /// Numeric state value in tenths (exact decimal bookkeeping).
    fn value_deci(&self, s: &Self::State) -> i64;
    fn initial(&self) -> Vec<(Self::State, f64)>;
    /// Sparse policy: (action index, probability), probabilities > 0.
    fn policy(&self, agent: usize, s: &Self::State) -> Vec<(u32, f64)>;
    /// Off-policy actions to materialize at (agent, timestep).
    fn extras(&self, agent: usize, t: usize) -> Vec<u32>;
    /// Sparse successor distribution for one joint action.
    fn step(&self, s: &Self::State, joint: &[u32]) -> Vec<(Self::State, f64)>;
}

/// Forward closure over the dynamics: every state reachable under any mix
/// of on-policy actions and registered deviations, per timestep, with
/// transition rows for the full per-step action-set product. This mirrors
/// the closure `mmdp::compile` performs on the materialized spec, so the
/// compiled model never hits a missing row for the branches these extras
/// were registered for.
pub(crate) fn assemble<D: Dynamics>(
    dynamics: &D,
) -> Result<(MmdpSpec, PolicySet, DeviationSet, Vec<D::State>)> {
    let n = dynamics.n_agents();
    let h = dynamics.horizon();

    let mut all_states: BTreeSet<D::State> = BTreeSet::new();
    let mut transitions: BTreeMap<(D::State, Vec<u32>), Vec<(D::State, f64)>> = BTreeMap::new();
    let mut reachable: BTreeSet<D::State> = BTreeSet::new();
    for (s, p) in dynamics.initial() {
        if p > 0.0 {
            reachable.insert(s.clone());
        }
        all_states.insert(s);
    }

    let mut deviations = DeviationSet::none();
    for t in 0..h {
        let mut act_sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        for agent in 1..=n {
            for s in &reachable {
                for (a, p) in dynamics.policy(agent, s) {
                    if p > 0.0 {
                        act_sets[agent - 1].insert(a);
                    }
                }
            }
            for a in dynamics.extras(agent, t) {
                act_sets[agent - 1].insert(a);
                deviations.add(agent, t, a);
            }
        }
        let joint = cartesian(&act_sets);
        let mut next: BTreeSet<D::State> = BTreeSet::new();
        for s in &reachable {
            for actions in &joint {
                let key = (s.clone(), actions.clone());
                let successors = transitions
                    .entry(key)
                    .or_insert_with(|| dynamics.step(s, actions));
                for (s2, p) in successors.iter() {
                    if *p > 0.0 {
                        next.insert(s2.clone());
                        all_states.insert(s2.clone());
                    }
                }
            }
        }
        reachable = next;
    }

    // Index states in their sort order (= domain ordering).
    let states: Vec<D::State> = all_states.into_iter().collect();
    let index: BTreeMap<&D::State, u32> = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s, i as u32))
        .collect();
    let labels: Vec<String> = states.iter().map(|s| dynamics.label(s)).collect();
    {
        let mut unique = labels.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != labels.len() {
            return Err(CfxError::Config("state labels are not unique".into()));
        }
    }

    let mut transition = BTreeMap::new();
    for ((s, a), successors) in &transitions {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (s2, p) in successors {
            *acc.entry(index[s2]).or_insert(0.0) += p;
        }
        transition.insert((index[s], a.clone()), acc.into_iter().collect::<Vec<_>>());
    }

    let initial = {
        let mut dense = vec![0.0; states.len()];
        for (s, p) in dynamics.initial() {
            dense[index[&s] as usize] += p;
        }
        dense
    };

    let policy_rows: Vec<BTreeMap<u32, Vec<f64>>> = (1..=n)
        .map(|agent| {
            states
                .iter()
                .map(|s| {
                    let mut dense = vec![0.0; dynamics.action_labels(agent).len()];
                    for (a, p) in dynamics.policy(agent, s) {
                        dense[a as usize] += p;
                    }
                    (index[s], dense)
                })
                .collect()
        })
        .collect();

    let spec = MmdpSpec {
        states: labels,
        n_agents: n,
        action_spaces: (1..=n).map(|agent| dynamics.action_labels(agent)).collect(),
        transition,
        horizon: h,
        initial,
        state_values: Some(states.iter().map(|s| dynamics.value_deci(s) as f64 / 10.0).collect()),
    };
    Ok((spec, PolicySet { rows: policy_rows }, deviations, states))
}

fn cartesian(sets: &[BTreeSet<u32>]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len().max(1));
        for prefix in &out {
            for &a in set {
                let mut row = prefix.clone();
                row.push(a);
                next.push(row);
            }
        }
        out = next;
    }
    out
}
