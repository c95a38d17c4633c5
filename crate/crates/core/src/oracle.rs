//! Exact counterfactual distributions for small models.
//!
//! All branches of a counterfactual query share one noise vector, and every
//! noise term is conditioned on the factual trajectory, i.e. restricted to
//! the interval that reproduces the observed value. Under the inverse-CDF
//! construction the joint law of the branches' values at one variable is
//! the comonotone coupling: sweeping the shared noise across the factual
//! interval, each branch's value is the cell of its own row that the noise
//! falls into. The joint child law is therefore the overlap measure of the
//! branches' cells, normalized by the factual interval length.
//!
//! The dynamic program tracks, per layer, the joint distribution over
//! per-branch frontier values (the current state and the actions taken in
//! it) together with per-branch partial response accumulators. Layer
//! support is capped; exceeding the cap is an explicit infeasibility error
//! rather than an approximation.

use std::collections::BTreeMap;

use crate::effects::{
    branch_ase, branch_do, branch_sse, eval_response, full_agent_set, EffectQuery, ResponseKind,
    ResponseSpec,
};
use crate::error::{CfxError, Result};
use crate::inference::{abduct, resolve_branch_order, BranchSpec, PosteriorMap};
use crate::scm::{ScmModel, Trajectory, VarId};

pub const DEFAULT_CAP: usize = 1_000_000;

/// Exact joint distribution over per-branch response values.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    pub labels: Vec<String>,
    /// (per-branch response values, probability), deterministic order.
    pub outcomes: Vec<(Vec<f64>, f64)>,
}

impl JointDistribution {
    pub fn branch_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn expectation(&self, branch: usize) -> f64 {
        self.outcomes
            .iter()
            .map(|(vals, p)| p * vals[branch])
            .sum()
    }

    /// Expectation of an arbitrary functional of the branch tuple.
    pub fn expectation_of(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.outcomes.iter().map(|(vals, p)| p * f(vals)).sum()
    }

    pub fn variance_of(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mean = self.expectation_of(&f);
        self.outcomes
            .iter()
            .map(|(vals, p)| {
                let d = f(vals) - mean;
                p * d * d
            })
            .sum()
    }

    /// Marginal law of one branch's response, grouped by exact value.
    pub fn marginal(&self, branch: usize) -> Vec<(f64, f64)> {
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for (vals, p) in &self.outcomes {
            *acc.entry(vals[branch].to_bits()).or_insert(0.0) += p;
        }
        acc.into_iter()
            .map(|(bits, p)| (f64::from_bits(bits), p))
            .collect()
    }
}

/// Joint distribution over per-branch states at one layer.
#[derive(Debug, Clone)]
pub struct LayerMarginal {
    pub time: usize,
    /// (per-branch state category, probability).
    pub support: Vec<(Vec<u32>, f64)>,
}

type AtomKey = (Vec<u32>, Vec<u64>);

struct Dp<'a> {
    model: &'a ScmModel,
    posterior: PosteriorMap,
    branches: &'a [BranchSpec],
    /// Branch evaluation order (copy sources first).
    order: Vec<usize>,
    /// Copy source branch index per branch, with threshold.
    copy: Vec<Option<(usize, usize)>>,
    response: &'a ResponseSpec,
    cap: usize,
    /// Variables currently described by atom windows.
    window_vars: Vec<usize>,
    /// (per-branch window values, per-branch response acc bits) -> prob.
    atoms: BTreeMap<AtomKey, f64>,
}

impl<'a> Dp<'a> {
    fn new(
        model: &'a ScmModel,
        tau: &'a Trajectory,
        branches: &'a [BranchSpec],
        response: &'a ResponseSpec,
        cap: usize,
    ) -> Result<Dp<'a>> {
        let order = resolve_branch_order(branches)?;
        let copy = branches
            .iter()
            .map(|b| {
                b.copy_actions.as_ref().map(|c| {
                    let src = branches.iter().position(|x| x.label == c.from).unwrap();
                    (src, c.after)
                })
            })
            .collect();
        let posterior = abduct(model, tau)?;
        let mut atoms = BTreeMap::new();
        atoms.insert(
            (vec![], vec![0f64.to_bits(); branches.len()]),
            1.0,
        );
        Ok(Dp {
            model,
            posterior,
            branches,
            order,
            copy,
            response,
            cap,
            window_vars: vec![],
            atoms,
        })
    }

    /// Response contribution of state variable `var` (by causal index), or
    /// None when the response ignores it.
    fn response_weight(&self, var: usize) -> Result<Option<f64>> {
        let v = self.model.var(var);
        let k = match v {
            VarId::State { time } => time,
            _ => return Ok(None),
        };
        match self.response.kind {
            ResponseKind::StateVariable(rv) => {
                Ok((self.model.index_of(rv)? == var).then_some(1.0))
            }
            ResponseKind::Return { gamma, from, to } => {
                Ok((from <= k && k <= to).then(|| gamma.powi((k - from) as i32)))
            }
        }
    }

    /// Advance the DP through variable `i`.
    fn step(&mut self, i: usize) -> Result<()> {
        let var = self.model.var(i);
        let (lo, hi) = self.posterior.interval(i);
        let width = hi - lo;
        let weight = self.response_weight(i)?;
        let parents = self.model.parents(i);
        // Positions of the parents inside the window.
        let ppos: Vec<usize> = parents
            .iter()
            .map(|p| {
                self.window_vars
                    .iter()
                    .position(|w| w == p)
                    .expect("parents are always inside the frontier window")
            })
            .collect();
        let n_branches = self.branches.len();
        let wlen = self.window_vars.len();

        let mut next: BTreeMap<AtomKey, f64> = BTreeMap::new();
        let mut segs: Vec<f64> = Vec::new();
        let mut cats = vec![0u32; n_branches];

        for ((window, accs), prob) in &self.atoms {
            // Determine each branch's mode at this variable.
            // None = natural (row lookup), Some(cat) = fixed by intervention.
            let mut fixed: Vec<Option<u32>> = vec![None; n_branches];
            let mut rows: Vec<Option<&crate::scm::CpdRow>> = vec![None; n_branches];
            for &b in &self.order {
                let spec = &self.branches[b];
                if let Some(cat) = spec.hard.get(i) {
                    fixed[b] = Some(cat);
                    continue;
                }
                if let Some((_, after)) = self.copy[b] {
                    if var.is_action() && var.time() > after {
                        // Resolved per segment from the source branch.
                        continue;
                    }
                }
                let key: Vec<u32> = ppos.iter().map(|&p| window[b * wlen + p]).collect();
                let row = self.model.cpd(i).row(&key).ok_or_else(|| CfxError::MissingRow {
                    var: var.to_string(),
                    key: format!("{key:?}"),
                })?;
                rows[b] = Some(row);
            }

            // Atomic noise segments of [lo, hi) induced by all active rows.
            segs.clear();
            segs.push(lo);
            for row in rows.iter().flatten() {
                for &b in row.breakpoints() {
                    if b > lo && b < hi {
                        segs.push(b);
                    }
                }
            }
            segs.push(hi);
            segs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            segs.dedup();

            for w in segs.windows(2) {
                let (x, y) = (w[0], w[1]);
                if y <= x {
                    continue;
                }
                let seg_prob = prob * (y - x) / width;
                for &b in &self.order {
                    cats[b] = if let Some(cat) = fixed[b] {
                        cat
                    } else if let Some(row) = rows[b] {
                        row.eval(x)
                    } else {
                        // Copy from the source branch in this same segment.
                        let (src, _) = self.copy[b].unwrap();
                        cats[src]
                    };
                }
                // Build the successor atom.
                let mut new_window: Vec<u32>;
                if var.is_action() {
                    new_window = Vec::with_capacity((wlen + 1) * n_branches);
                    for (b, _) in self.branches.iter().enumerate() {
                        new_window.extend_from_slice(&window[b * wlen..(b + 1) * wlen]);
                        new_window.push(cats[b]);
                    }
                } else {
                    // State variable: the window collapses to it.
                    new_window = cats[..n_branches].to_vec();
                }
                let mut new_accs = accs.clone();
                if let Some(disc) = weight {
                    for (b, acc) in new_accs.iter_mut().enumerate() {
                        let value = self.model.value_of(i, cats[b])?;
                        *acc = (f64::from_bits(*acc) + disc * value).to_bits();
                    }
                }
                *next.entry((new_window, new_accs)).or_insert(0.0) += seg_prob;
            }
        }

        if next.len() > self.cap {
            return Err(CfxError::OracleInfeasible {
                cells: next.len(),
                cap: self.cap,
            });
        }
        self.atoms = next;
        if var.is_action() {
            self.window_vars.push(i);
        } else {
            self.window_vars = vec![i];
        }
        Ok(())
    }

    /// Per-branch state marginal of the current window (call right after a
    /// state variable was processed).
    fn state_marginal(&self, time: usize) -> LayerMarginal {
        let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for ((window, _), prob) in &self.atoms {
            *acc.entry(window.clone()).or_insert(0.0) += prob;
        }
        LayerMarginal {
            time,
            support: acc.into_iter().collect(),
        }
    }

    fn into_joint(self) -> JointDistribution {
        let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for ((_, accs), prob) in &self.atoms {
            *acc.entry(accs.clone()).or_insert(0.0) += prob;
        }
        JointDistribution {
            labels: self.branches.iter().map(|b| b.label.clone()).collect(),
            outcomes: acc
                .into_iter()
                .map(|(bits, p)| (bits.into_iter().map(f64::from_bits).collect(), p))
                .collect(),
        }
    }
}

/// Exact joint law of the branch responses conditioned on the factual
/// trajectory, with optional per-layer joint state marginals.
pub fn exact_joint_distribution(
    model: &ScmModel,
    tau: &Trajectory,
    branches: &[BranchSpec],
    response: &ResponseSpec,
    cap: usize,
    layer_marginals: bool,
) -> Result<(JointDistribution, Option<Vec<LayerMarginal>>)> {
    let mut dp = Dp::new(model, tau, branches, response, cap)?;
    let stop = model.index_of(VarId::state(response.last_time()))?;
    let mut layers = layer_marginals.then(Vec::new);
    for i in 0..=stop {
        dp.step(i)?;
        if let (Some(layers), VarId::State { time }) = (layers.as_mut(), model.var(i)) {
            layers.push(dp.state_marginal(time));
        }
    }
    Ok((dp.into_joint(), layers))
}

/// Exact values of all four effects for a query.
#[derive(Debug, Clone)]
pub struct OracleEffects {
    pub tcfe: f64,
    pub tot_ase: f64,
    pub sse: f64,
    pub r_sse: f64,
}

pub fn oracle_effects(model: &ScmModel, query: &EffectQuery, cap: usize) -> Result<OracleEffects> {
    let branches = vec![
        branch_do(model, query)?,
        branch_ase(model, query, full_agent_set(model))?,
        branch_sse(model, query)?,
    ];
    let (joint, _) =
        exact_joint_distribution(model, &query.tau, &branches, &query.response, cap, false)?;
    let y_fact = eval_response(model, &query.tau, &query.response)?;
    let e_do = joint.expectation(0);
    let e_nat = joint.expectation(1);
    let e_pin = joint.expectation(2);
    Ok(OracleEffects {
        tcfe: e_do - y_fact,
        tot_ase: e_nat - y_fact,
        sse: e_pin - y_fact,
        r_sse: joint.expectation_of(|v| v[1] - v[0]),
    })
}

/// Exact expected conditional variance of the branch response difference
/// `Y_natural - Y_do`, conditioning on all noise before state `k`
/// (`up_to_k = false`) or additionally on the noise of state k and the
/// actions taken in it (`up_to_k = true`).
pub fn oracle_conditional_variance(
    model: &ScmModel,
    query: &EffectQuery,
    k: usize,
    up_to_k: bool,
    cap: usize,
) -> Result<f64> {
    let branches = vec![
        branch_do(model, query)?,
        branch_ase(model, query, full_agent_set(model))?,
    ];
    let t_y = query.response.last_time();
    let stop = model.index_of(VarId::state(t_y))?;
    // Causal index of the first unconditioned variable.
    let boundary = if up_to_k {
        if k >= model.horizon() {
            model.n_vars()
        } else {
            model.index_of(VarId::state(k + 1))?
        }
    } else {
        model.index_of(VarId::state(k))?
    };
    let boundary = boundary.min(stop + 1);

    let mut dp = Dp::new(model, &query.tau, &branches, &query.response, cap)?;
    for i in 0..boundary {
        dp.step(i)?;
    }
    // Group frontier atoms by window only: the conditional variance of the
    // remaining response contributions depends on the frontier values, not
    // on the partials accumulated so far.
    let mut frontiers: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for ((window, _), prob) in &dp.atoms {
        *frontiers.entry(window.clone()).or_insert(0.0) += prob;
    }
    let window_vars = dp.window_vars.clone();
    drop(dp);

    let mut total = 0.0;
    for (window, weight) in frontiers {
        // Tail DP from this frontier with fresh accumulators.
        let mut tail = Dp::new(model, &query.tau, &branches, &query.response, cap)?;
        tail.window_vars = window_vars.clone();
        tail.atoms = BTreeMap::from([((window, vec![0f64.to_bits(); branches.len()]), 1.0)]);
        for i in boundary..=stop {
            tail.step(i)?;
        }
        let joint = tail.into_joint();
        total += weight * joint.variance_of(|v| v[1] - v[0]);
    }
    Ok(total)
}
