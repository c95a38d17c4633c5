//! Seeded random models and queries for validation suites.
//!
//! Every generator is a pure function of its seed, so suites that loop over
//! seeds are reproducible bit for bit.

use std::collections::BTreeMap;

use rand::Rng;

use crate::effects::{EffectQuery, ResponseKind, ResponseSpec};
use crate::mmdp::{compile, dense_to_sparse, DeviationSet, MmdpSpec, OrderingSpec, PolicySet};
use crate::rng::aux_rng;
use crate::scm::{ScmModel, Trajectory, VarId};

/// Random categorical distribution over k outcomes. With probability ~0.25
/// one entry is zeroed (and renormalized) to exercise zero-probability
/// categories.
fn random_row(rng: &mut impl Rng, k: usize, allow_zeros: bool) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        if allow_zeros && k > 1 && rng.random::<f64>() < 0.25 {
            let z = rng.random_range(0..k);
            row[z] = 0.0;
        }
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            continue;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
        // Exact unit sum after normalization, within builder tolerance.
        return row;
    }
}

/// A random small MDP spec plus stochastic policies. Sizes are kept small
/// enough for the exact oracle: up to 3 agents, horizon 4, 4 states.
pub fn random_spec(seed: u64) -> (MmdpSpec, PolicySet) {
    let mut rng = aux_rng(seed, 0x5EED);
    let n_states = rng.random_range(2..=4usize);
    let n_agents = rng.random_range(1..=3usize);
    let horizon = rng.random_range(2..=4usize);
    let action_counts: Vec<usize> = (0..n_agents).map(|_| rng.random_range(2..=3)).collect();

    let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let action_spaces: Vec<Vec<String>> = action_counts
        .iter()
        .enumerate()
        .map(|(i, &k)| (0..k).map(|a| format!("a{}_{a}", i + 1)).collect())
        .collect();

    let mut transition = BTreeMap::new();
    let joint: Vec<Vec<u32>> = cartesian(&action_counts);
    for s in 0..n_states as u32 {
        for a in &joint {
            transition.insert((s, a.clone()), dense_to_sparse(&random_row(&mut rng, n_states, true)));
        }
    }
    let initial = random_row(&mut rng, n_states, false);
    let state_values: Vec<f64> = (0..n_states).map(|_| rng.random_range(-5..=5) as f64).collect();

    let mmdp = MmdpSpec {
        states,
        n_agents,
        action_spaces,
        transition,
        horizon,
        initial,
        state_values: Some(state_values),
    };
    let rows = (0..n_agents)
        .map(|i| {
            (0..n_states as u32)
                .map(|s| (s, random_row(&mut rng, action_counts[i], true)))
                .collect()
        })
        .collect();
    (mmdp, PolicySet { rows })
}

fn cartesian(counts: &[usize]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for &k in counts {
        let mut next = Vec::new();
        for prefix in &out {
            for a in 0..k as u32 {
                let mut row = prefix.clone();
                row.push(a);
                next.push(row);
            }
        }
        out = next;
    }
    out
}

/// Compile the random spec for `seed` with every action materialized, so
/// arbitrary interventions are solvable.
pub fn random_model(seed: u64) -> ScmModel {
    let (mmdp, pi) = random_spec(seed);
    compile(&mmdp, &pi, &OrderingSpec::none(), &DeviationSet::all())
        .expect("random spec always compiles")
}

/// A random query against `model`: a factual trajectory sampled from the
/// prior, an action variable, and an alternative action different from the
/// factual one when the agent has more than one action.
pub fn random_query(model: &ScmModel, seed: u64) -> (Trajectory, EffectQuery) {
    let mut rng = aux_rng(seed, 0xBEEF);
    let (_, tau) = model
        .sample_prior_indexed(seed ^ 0x517A_11ED, 0)
        .expect("prior sample");
    let agent = rng.random_range(1..=model.n_agents());
    let time = rng.random_range(0..model.horizon());
    let idx = model.index_of(VarId::action(agent, time)).unwrap();
    let k = model.cpd(idx).domain().len() as u32;
    let factual = tau.cat(idx);
    let action = if k > 1 {
        let mut a = rng.random_range(0..k);
        while a == factual {
            a = rng.random_range(0..k);
        }
        a
    } else {
        factual
    };
    let response = if rng.random::<f64>() < 0.5 {
        ResponseSpec::new(ResponseKind::StateVariable(VarId::state(model.horizon())))
    } else {
        let to = model.horizon();
        let from = rng.random_range(0..=time.min(to));
        ResponseSpec::new(ResponseKind::Return {
            gamma: if rng.random::<f64>() < 0.5 { 1.0 } else { 0.9 },
            from,
            to,
        })
    };
    let query = EffectQuery::new(model, &tau, agent, time, action, response)
        .expect("generated query is valid");
    (tau, query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdp::consistency_check;

    #[test]
    fn random_models_compile_and_are_consistent() {
        for seed in 0..20 {
            let (mmdp, pi) = random_spec(seed);
            let model = compile(&mmdp, &pi, &OrderingSpec::none(), &DeviationSet::all()).unwrap();
            let report = consistency_check(&model, &mmdp, &pi).unwrap();
            assert!(report.passed(), "seed {seed}: {:?}", report.worst);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = random_model(9);
        let b = random_model(9);
        let (ta, _) = a.sample_prior(1).unwrap();
        let (tb, _) = b.sample_prior(1).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn random_query_alternative_differs_from_factual() {
        for seed in 0..20 {
            let m = random_model(seed);
            let (tau, q) = random_query(&m, seed);
            let idx = m.index_of(VarId::action(q.agent, q.time)).unwrap();
            if m.cpd(idx).domain().len() > 1 {
                assert_ne!(q.action, tau.cat(idx), "seed {seed}");
            }
        }
    }
}
