//! Counterfactual inference by abduction, action and prediction.
//!
//! Abduction inverts the inverse-CDF structural functions: observing a
//! trajectory pins each noise term to the half-open interval that produces
//! the observed value given its observed parents. Because noise terms are
//! mutually independent the posterior is a product of uniform intervals.
//! Counterfactual branches are then solved on noise drawn once and shared
//! across every branch, which keeps per-sample algebraic identities between
//! effects exact.

use std::collections::BTreeMap;

use crate::error::{CfxError, Result};
use crate::rng::{SampleRng, Stream};
use crate::scm::{InterventionSet, NoiseVector, ScmModel, Trajectory, VarId};

/// Posterior over noise given a trajectory: one interval per variable, in
/// causal order. Deterministic variables carry the uninformative (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMap {
    pub intervals: Vec<(f64, f64)>,
}

impl PosteriorMap {
    pub fn interval(&self, index: usize) -> (f64, f64) {
        self.intervals[index]
    }
}

/// Per-variable CDF interval inversion. Fails if any observed value has
/// zero probability given its observed parents (model/trajectory mismatch).
pub fn abduct(model: &ScmModel, tau: &Trajectory) -> Result<PosteriorMap> {
    if tau.0.len() != model.n_vars() {
        return Err(CfxError::Config("trajectory length mismatch".into()));
    }
    let mut intervals = Vec::with_capacity(model.n_vars());
    for i in 0..model.n_vars() {
        let key = model.parent_key(i, &tau.0);
        let row = model.cpd(i).row(&key).ok_or_else(|| CfxError::MissingRow {
            var: model.var(i).to_string(),
            key: format!("{key:?}"),
        })?;
        let cat = tau.cat(i);
        let (lo, hi) = row.interval(cat).ok_or_else(|| CfxError::Abduction {
            var: model.var(i).to_string(),
            label: model.label(i, cat).to_string(),
        })?;
        intervals.push((lo, hi));
    }
    Ok(PosteriorMap { intervals })
}

/// Draw one noise vector from the posterior: independently uniform on each
/// interval, addressed by (seed, sample index, variable index).
pub fn sample_posterior(posterior: &PosteriorMap, seed: u64, index: u64) -> NoiseVector {
    let mut rng = SampleRng::new(seed, Stream::Sample(index));
    NoiseVector(
        posterior
            .intervals
            .iter()
            .enumerate()
            .map(|(k, &(lo, hi))| scale_into(rng.u01_at(k), lo, hi))
            .collect(),
    )
}

/// Map a [0,1) uniform into [lo, hi), guarding the upper endpoint against
/// floating-point roundup so interval membership is never violated.
pub(crate) fn scale_into(u: f64, lo: f64, hi: f64) -> f64 {
    let v = lo + u * (hi - lo);
    if v >= hi {
        hi.next_down()
    } else {
        v
    }
}

/// One counterfactual world to solve. Branches share a single posterior
/// noise draw. `copy_actions` grafts another branch's solved actions after
/// a time threshold; hard interventions take precedence over copies, and
/// both take precedence over the natural structural equation.
#[derive(Debug, Clone)]
pub struct BranchSpec {
    pub label: String,
    pub hard: InterventionSet,
    pub copy_actions: Option<CopyActions>,
}

/// Copy every action variable at `time > after` from the branch named
/// `from`, except those already fixed by the branch's own hard set.
#[derive(Debug, Clone)]
pub struct CopyActions {
    pub from: String,
    pub after: usize,
}

impl BranchSpec {
    pub fn plain(label: impl Into<String>, hard: InterventionSet) -> BranchSpec {
        BranchSpec {
            label: label.into(),
            hard,
            copy_actions: None,
        }
    }

    pub fn copying(
        label: impl Into<String>,
        hard: InterventionSet,
        from: impl Into<String>,
        after: usize,
    ) -> BranchSpec {
        BranchSpec {
            label: label.into(),
            hard,
            copy_actions: Some(CopyActions {
                from: from.into(),
                after,
            }),
        }
    }
}

/// Branch specs sorted so that every copy source is solved before its
/// consumers. Fails on duplicate labels, dangling references or cycles.
pub fn resolve_branch_order(branches: &[BranchSpec]) -> Result<Vec<usize>> {
    let mut by_label: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, b) in branches.iter().enumerate() {
        if by_label.insert(b.label.as_str(), i).is_some() {
            return Err(CfxError::BranchGraph(format!(
                "duplicate branch label '{}'",
                b.label
            )));
        }
    }
    let mut order = Vec::with_capacity(branches.len());
    let mut state = vec![0u8; branches.len()]; // 0 unseen, 1 visiting, 2 done
    fn visit(
        i: usize,
        branches: &[BranchSpec],
        by_label: &BTreeMap<&str, usize>,
        state: &mut [u8],
        order: &mut Vec<usize>,
    ) -> Result<()> {
        match state[i] {
            2 => return Ok(()),
            1 => {
                return Err(CfxError::BranchGraph(format!(
                    "copy cycle through '{}'",
                    branches[i].label
                )))
            }
            _ => {}
        }
        state[i] = 1;
        if let Some(copy) = &branches[i].copy_actions {
            let &src = by_label.get(copy.from.as_str()).ok_or_else(|| {
                CfxError::BranchGraph(format!("unknown copy source '{}'", copy.from))
            })?;
            visit(src, branches, by_label, state, order)?;
        }
        state[i] = 2;
        order.push(i);
        Ok(())
    }
    for i in 0..branches.len() {
        visit(i, branches, &by_label, &mut state, &mut order)?;
    }
    Ok(order)
}

/// Solve every branch on one shared noise vector.
pub fn solve_branches(
    model: &ScmModel,
    u: &NoiseVector,
    branches: &[BranchSpec],
    order: &[usize],
) -> Result<Vec<Trajectory>> {
    let mut solved: Vec<Option<Trajectory>> = vec![None; branches.len()];
    for &bi in order {
        let spec = &branches[bi];
        let mut iv = spec.hard.clone();
        if let Some(copy) = &spec.copy_actions {
            let src_idx = branches
                .iter()
                .position(|b| b.label == copy.from)
                .expect("validated by resolve_branch_order");
            let src = solved[src_idx]
                .as_ref()
                .expect("source solved before consumer");
            for i in 0..model.n_vars() {
                let var = model.var(i);
                if var.is_action() && var.time() > copy.after && iv.get(i).is_none() {
                    iv.fix(model, var, src.cat(i))?;
                }
            }
        }
        solved[bi] = Some(model.solve(u, &iv)?);
    }
    Ok(solved.into_iter().map(|t| t.unwrap()).collect())
}

/// Abduct, draw the `index`-th posterior noise vector, and solve every
/// branch on it. Returns trajectories keyed by branch label.
pub fn counterfactual_sample(
    model: &ScmModel,
    tau: &Trajectory,
    branches: &[BranchSpec],
    seed: u64,
    index: u64,
) -> Result<BTreeMap<String, Trajectory>> {
    let posterior = abduct(model, tau)?;
    let order = resolve_branch_order(branches)?;
    let u = sample_posterior(&posterior, seed, index);
    let solved = solve_branches(model, &u, branches, &order)?;
    Ok(branches
        .iter()
        .zip(solved)
        .map(|(b, t)| (b.label.clone(), t))
        .collect())
}

/// Convenience: the hard intervention `do(A_{i,t} := a)`.
pub fn do_action(model: &ScmModel, agent: usize, time: usize, action: u32) -> Result<InterventionSet> {
    let mut iv = InterventionSet::empty();
    iv.fix(model, VarId::action(agent, time), action)?;
    Ok(iv)
}
