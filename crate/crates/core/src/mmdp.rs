//! Compile an MDP specification plus a joint policy into a structural
//! causal model, and verify that the compiled model's conditional laws
//! reproduce the specification exactly.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{CfxError, Result};
use crate::scm::{Cpd, ScmBuilder, ScmModel, VarId};

/// A probability vector stored sparsely: (index, p) pairs with p > 0,
/// entries for omitted indices are zero.
pub type SparseRow = Vec<(u32, f64)>;

/// A finite multi-agent MDP: states, per-agent action sets, a transition
/// law, a horizon and an initial distribution.
#[derive(Debug, Clone)]
pub struct MmdpSpec {
    pub states: Vec<String>,
    pub n_agents: usize,
    /// Per-agent action label sets, index 0 = agent 1.
    pub action_spaces: Vec<Vec<String>>,
    /// Transition law: (state, joint action) -> sparse probability vector
    /// over `states`. Rows are required for every reachable pair.
    pub transition: BTreeMap<(u32, Vec<u32>), SparseRow>,
    pub horizon: usize,
    pub initial: Vec<f64>,
    /// Optional numeric valuation of states, used by response functionals.
    pub state_values: Option<Vec<f64>>,
}

impl MmdpSpec {
    pub fn state_index(&self, label: &str) -> Option<u32> {
        self.states.iter().position(|s| s == label).map(|i| i as u32)
    }

    pub fn action_index(&self, agent: usize, label: &str) -> Option<u32> {
        self.action_spaces[agent - 1]
            .iter()
            .position(|a| a == label)
            .map(|i| i as u32)
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.horizon == 0 {
            return Err(CfxError::Config("need at least one agent and one step".into()));
        }
        if self.action_spaces.len() != self.n_agents {
            return Err(CfxError::Config(format!(
                "{} action spaces for {} agents",
                self.action_spaces.len(),
                self.n_agents
            )));
        }
        if self.initial.len() != self.states.len() {
            return Err(CfxError::Config("initial distribution length mismatch".into()));
        }
        check_distribution(&self.initial, "initial distribution")?;
        for ((s, a), row) in &self.transition {
            for &(s2, _) in row {
                if s2 as usize >= self.states.len() {
                    return Err(CfxError::Config(format!(
                        "transition row for ({s}, {a:?}) references state {s2}"
                    )));
                }
            }
            check_sparse_distribution(row, "transition row")?;
        }
        if let Some(v) = &self.state_values {
            if v.len() != self.states.len() {
                return Err(CfxError::Config("state value table length mismatch".into()));
            }
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in p {
        if x < 0.0 || !x.is_finite() {
            return Err(CfxError::Config(format!("{what}: negative entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(CfxError::Config(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

/// Convert a dense probability vector to sparse pairs.
pub fn dense_to_sparse(p: &[f64]) -> SparseRow {
    p.iter()
        .enumerate()
        .filter(|&(_, &x)| x != 0.0)
        .map(|(i, &x)| (i as u32, x))
        .collect()
}

fn check_sparse_distribution(p: &SparseRow, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &(_, x) in p {
        if x < 0.0 || !x.is_finite() {
            return Err(CfxError::Config(format!("{what}: negative entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(CfxError::Config(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

/// Stationary per-agent policies: agent i, state s -> distribution over
/// the agent's actions.
#[derive(Debug, Clone)]
pub struct PolicySet {
    /// `rows[agent-1][state] = distribution`, sparse over states.
    pub rows: Vec<BTreeMap<u32, Vec<f64>>>,
}

impl PolicySet {
    pub fn deterministic(
        mmdp: &MmdpSpec,
        choose: impl Fn(usize, u32) -> u32,
    ) -> PolicySet {
        let rows = (1..=mmdp.n_agents)
            .map(|agent| {
                (0..mmdp.states.len() as u32)
                    .map(|s| {
                        let k = mmdp.action_spaces[agent - 1].len();
                        let mut p = vec![0.0; k];
                        p[choose(agent, s) as usize] = 1.0;
                        (s, p)
                    })
                    .collect()
            })
            .collect();
        PolicySet { rows }
    }

    pub fn row(&self, agent: usize, state: u32) -> Option<&Vec<f64>> {
        self.rows[agent - 1].get(&state)
    }

    fn validate(&self, mmdp: &MmdpSpec) -> Result<()> {
        if self.rows.len() != mmdp.n_agents {
            return Err(CfxError::Config("policy set agent count mismatch".into()));
        }
        for (i, rows) in self.rows.iter().enumerate() {
            for (s, p) in rows {
                if p.len() != mmdp.action_spaces[i].len() {
                    return Err(CfxError::Config(format!(
                        "policy row for agent {} state {s} has wrong length",
                        i + 1
                    )));
                }
                check_distribution(p, "policy row")?;
            }
        }
        Ok(())
    }
}

/// Optional total-ordering overrides for compiled domains.
#[derive(Debug, Clone, Default)]
pub struct OrderingSpec {
    /// Permutation of state indices applied to every state variable.
    pub states: Option<Vec<u32>>,
    /// Per-agent permutations of action indices.
    pub actions: Vec<Option<Vec<u32>>>,
}

impl OrderingSpec {
    pub fn none() -> Self {
        OrderingSpec::default()
    }

    /// Seeded random total orderings for state domains (robustness sweeps).
    pub fn random_states(mmdp: &MmdpSpec, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::aux_rng(seed, 0xC0DE);
        let mut perm: Vec<u32> = (0..mmdp.states.len() as u32).collect();
        perm.shuffle(&mut rng);
        OrderingSpec {
            states: Some(perm),
            actions: vec![],
        }
    }
}

/// Extra actions to include in the reachability closure beyond the policy
/// support, keyed by (agent, timestep). Interventions can only be solved
/// for (state, action) pairs whose CPD rows were materialized, so callers
/// register the alternatives they intend to query.
#[derive(Debug, Clone, Default)]
pub struct DeviationSet {
    by_agent_time: BTreeMap<(usize, usize), BTreeSet<u32>>,
    /// When true, every action of every agent is included at every step
    /// (use for small synthetic models only).
    pub all_actions: bool,
}

impl DeviationSet {
    pub fn none() -> Self {
        DeviationSet::default()
    }

    pub fn all() -> Self {
        DeviationSet {
            all_actions: true,
            ..DeviationSet::default()
        }
    }

    pub fn add(&mut self, agent: usize, time: usize, action: u32) {
        self.by_agent_time
            .entry((agent, time))
            .or_default()
            .insert(action);
    }

    fn extras(&self, agent: usize, time: usize, n_actions: usize) -> Vec<u32> {
        if self.all_actions {
            return (0..n_actions as u32).collect();
        }
        self.by_agent_time
            .get(&(agent, time))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }
}

/// Build an SCM whose per-variable conditional laws equal the MDP's initial
/// distribution, transition law and policies exactly (as interval measures).
///
/// CPD rows are materialized over the forward reachability closure from the
/// initial distribution's support. At every step the closure expands each
/// agent's action set to the union of its policy support over all reachable
/// states at that step plus any registered deviations, so that any mix of
/// on-policy, pinned and copied actions used by counterfactual branches
/// stays inside the materialized table.
pub fn compile(
    mmdp: &MmdpSpec,
    pi: &PolicySet,
    orderings: &OrderingSpec,
    deviations: &DeviationSet,
) -> Result<ScmModel> {
    mmdp.validate()?;
    pi.validate(mmdp)?;

    let n = mmdp.n_agents;
    let h = mmdp.horizon;
    let mut builder = ScmBuilder::new(n, h);

    let state_cpd_template = || -> Result<Cpd> {
        let cpd = Cpd::new(mmdp.states.clone());
        match &orderings.states {
            Some(perm) => cpd.with_ordering(perm.clone()),
            None => Ok(cpd),
        }
    };
    let action_cpd_template = |agent: usize| -> Result<Cpd> {
        let cpd = Cpd::new(mmdp.action_spaces[agent - 1].clone());
        match orderings.actions.get(agent - 1).and_then(|o| o.as_ref()) {
            Some(perm) => cpd.with_ordering(perm.clone()),
            None => Ok(cpd),
        }
    };

    // S_0.
    let mut s0 = state_cpd_template()?;
    s0.insert_row(vec![], &mmdp.initial)?;
    builder.set_cpd(VarId::state(0), s0);
    if let Some(values) = &mmdp.state_values {
        builder.set_values(VarId::state(0), values.clone());
    }

    // Forward closure.
    let mut reachable: BTreeSet<u32> = mmdp
        .initial
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(i, _)| i as u32)
        .collect();

    for t in 0..h {
        // Per-agent action sets for this step.
        let mut act_sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        for agent in 1..=n {
            for &s in &reachable {
                let row = pi.row(agent, s).ok_or_else(|| {
                    CfxError::Config(format!(
                        "policy of agent {agent} undefined for reachable state '{}'",
                        mmdp.states[s as usize]
                    ))
                })?;
                for (a, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        act_sets[agent - 1].insert(a as u32);
                    }
                }
            }
            for a in deviations.extras(agent, t, mmdp.action_spaces[agent - 1].len()) {
                act_sets[agent - 1].insert(a);
            }
        }

        // Action CPDs: one row per reachable state.
        for agent in 1..=n {
            let mut cpd = action_cpd_template(agent)?;
            for &s in &reachable {
                cpd.insert_row(vec![s], pi.row(agent, s).unwrap())?;
            }
            builder.set_cpd(VarId::action(agent, t), cpd);
        }

        // State CPD: one row per (reachable state, joint action in the
        // closure product).
        let mut next_reachable = BTreeSet::new();
        let mut cpd = state_cpd_template()?;
        let joint: Vec<Vec<u32>> = cartesian(&act_sets);
        for &s in &reachable {
            for actions in &joint {
                let row = mmdp.transition.get(&(s, actions.clone())).ok_or_else(|| {
                    CfxError::Config(format!(
                        "transition undefined for reachable state '{}' and joint action {:?}",
                        mmdp.states[s as usize],
                        actions
                            .iter()
                            .enumerate()
                            .map(|(i, &a)| mmdp.action_spaces[i][a as usize].clone())
                            .collect::<Vec<_>>()
                    ))
                })?;
                let mut key = vec![s];
                key.extend_from_slice(actions);
                cpd.insert_row_sparse(key, row)?;
                for &(s2, p) in row {
                    if p > 0.0 {
                        next_reachable.insert(s2);
                    }
                }
            }
        }
        builder.set_cpd(VarId::state(t + 1), cpd);
        if let Some(values) = &mmdp.state_values {
            builder.set_values(VarId::state(t + 1), values.clone());
        }
        reachable = next_reachable;
    }

    builder.build()
}

fn cartesian(sets: &[BTreeSet<u32>]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
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

/// One deviation found by [`consistency_check`].
#[derive(Debug, Clone)]
pub struct ConsistencyDeviation {
    pub what: String,
    pub expected: f64,
    pub actual: f64,
}

/// Result of comparing a compiled model's conditional laws against the
/// specification they were compiled from.
#[derive(Debug, Clone, Default)]
pub struct ConsistencyReport {
    pub max_deviation: f64,
    pub checked: usize,
    pub worst: Option<ConsistencyDeviation>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= 1e-12
    }

    fn record(&mut self, what: impl FnOnce() -> String, expected: f64, actual: f64) {
        self.checked += 1;
        let dev = (expected - actual).abs();
        if dev > self.max_deviation {
            self.max_deviation = dev;
            self.worst = Some(ConsistencyDeviation {
                what: what(),
                expected,
                actual,
            });
        }
    }
}

/// Exact measure comparison of the compiled model against σ, T and π:
/// every materialized row's interval measures must reproduce the spec's
/// probabilities within 1e-12, including the zero entries.
pub fn consistency_check(
    model: &ScmModel,
    mmdp: &MmdpSpec,
    pi: &PolicySet,
) -> Result<ConsistencyReport> {
    if model.n_agents() != mmdp.n_agents || model.horizon() != mmdp.horizon {
        return Err(CfxError::Config("model and spec shapes differ".into()));
    }
    let mut report = ConsistencyReport::default();

    // Initial distribution.
    let s0 = model.cpd_of(VarId::state(0))?;
    let row = s0
        .row(&[] as &[u32])
        .ok_or_else(|| CfxError::Inconsistent("missing initial row".into()))?;
    for (s, &p) in mmdp.initial.iter().enumerate() {
        report.record(
            || format!("sigma({})", mmdp.states[s]),
            p,
            row.measure(s as u32),
        );
    }

    for t in 0..mmdp.horizon {
        for agent in 1..=mmdp.n_agents {
            let cpd = model.cpd_of(VarId::action(agent, t))?;
            for (key, row) in cpd.rows() {
                let s = key[0];
                let expected = pi.row(agent, s).ok_or_else(|| {
                    CfxError::Inconsistent(format!(
                        "policy missing for agent {agent} state {}",
                        mmdp.states[s as usize]
                    ))
                })?;
                for (a, &p) in expected.iter().enumerate() {
                    report.record(
                        || {
                            format!(
                                "pi_{agent}({} | {})",
                                mmdp.action_spaces[agent - 1][a], mmdp.states[s as usize]
                            )
                        },
                        p,
                        row.measure(a as u32),
                    );
                }
            }
        }
        let cpd = model.cpd_of(VarId::state(t + 1))?;
        for (key, row) in cpd.rows() {
            let s = key[0];
            let actions = key[1..].to_vec();
            let expected = mmdp.transition.get(&(s, actions.clone())).ok_or_else(|| {
                CfxError::Inconsistent(format!(
                    "spec transition missing for materialized row ({}, {:?})",
                    mmdp.states[s as usize], actions
                ))
            })?;
            // Compare over the union of supports so dropped and spurious
            // entries both register as deviations.
            let mut union: BTreeSet<u32> = expected.iter().map(|&(s2, _)| s2).collect();
            union.extend(row.support().iter().map(|&(s2, _)| s2));
            for s2 in union {
                let p = expected
                    .iter()
                    .find(|&&(x, _)| x == s2)
                    .map_or(0.0, |&(_, p)| p);
                report.record(
                    || {
                        format!(
                            "T({} | {}, {:?}) at t={t}",
                            mmdp.states[s2 as usize], mmdp.states[s as usize], actions
                        )
                    },
                    p,
                    row.measure(s2),
                );
            }
        }
    }
    Ok(report)
}

/// Chi-square goodness-of-fit of empirical prior samples against every
/// materialized conditional law. Returns the smallest per-row p-value and
/// the aggregate statistic.
pub struct ChiSquareReport {
    pub min_row_p: f64,
    pub rows_tested: usize,
    pub aggregate_stat: f64,
    pub aggregate_df: f64,
}

impl ChiSquareReport {
    pub fn aggregate_p(&self) -> f64 {
        crate::stats::chi_square_p(self.aggregate_stat, self.aggregate_df)
    }
}

pub fn empirical_consistency(model: &ScmModel, n_samples: usize, seed: u64) -> Result<ChiSquareReport> {
    // Count realized (variable, parent key, value) triples.
    let mut counts: Vec<BTreeMap<(Vec<u32>, u32), u64>> =
        vec![BTreeMap::new(); model.n_vars()];
    let mut row_totals: Vec<BTreeMap<Vec<u32>, u64>> = vec![BTreeMap::new(); model.n_vars()];
    for j in 0..n_samples {
        let (_, tau) = model.sample_prior_indexed(seed, j as u64)?;
        for i in 0..model.n_vars() {
            let key = model.parent_key(i, &tau.0);
            *counts[i].entry((key.clone(), tau.cat(i))).or_insert(0) += 1;
            *row_totals[i].entry(key).or_insert(0) += 1;
        }
    }
    let mut min_p = 1.0f64;
    let mut rows_tested = 0usize;
    let mut agg_stat = 0.0f64;
    let mut agg_df = 0.0f64;
    for i in 0..model.n_vars() {
        for (key, &total) in &row_totals[i] {
            let row = model.cpd(i).row(key).unwrap();
            if row.support().len() < 2 || total < 20 {
                continue;
            }
            let mut stat = 0.0;
            for &(cat, p) in row.support() {
                let observed = *counts[i].get(&(key.clone(), cat)).unwrap_or(&0) as f64;
                let expected = p * total as f64;
                stat += (observed - expected).powi(2) / expected;
            }
            let df = (row.support().len() - 1) as f64;
            rows_tested += 1;
            agg_stat += stat;
            agg_df += df;
            min_p = min_p.min(crate::stats::chi_square_p(stat, df));
        }
    }
    Ok(ChiSquareReport {
        min_row_p: min_p,
        rows_tested,
        aggregate_stat: agg_stat,
        aggregate_df: agg_df,
    })
}
