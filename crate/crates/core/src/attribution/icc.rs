//! Attribution of the reverse state-specific effect over state variables.
//!
//! The reverse state-specific effect is the posterior mean of the response
//! difference between the natural-intervention branch and the `do(a)`
//! branch. Each state variable is scored by how much knowing its noise
//! group (the state's own noise plus the noise of the actions taken in it)
//! reduces the expected conditional variance of that difference. Scores are
//! the variance reductions normalized by the total variance and scaled by
//! the effect, so they sum to the effect exactly whenever the total
//! variance is positive.
//!
//! The variance sequence is estimated once per boundary with nested Monte
//! Carlo and shared between adjacent terms, which makes the telescoping sum
//! exact in finite samples.

use rayon::prelude::*;
use serde::Serialize;

use crate::effects::{branch_ase, branch_do, eval_response, full_agent_set, EffectQuery};
use crate::error::{CfxError, Result};
use crate::inference::{abduct, resolve_branch_order, solve_branches};
use crate::rng::{SampleRng, Stream};
use crate::scm::{NoiseVector, ScmModel, VarId};
use crate::stats::{gini, neumaier_sum};

/// Which noise terms are conditioned on (drawn in the outer loop).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondBoundary {
    /// All noise of variables strictly before state `k`.
    Before(usize),
    /// Additionally the noise of state `k` and the actions taken in it.
    UpTo(usize),
}

impl CondBoundary {
    /// Number of leading causal indices that are conditioned.
    fn cond_len(self, model: &ScmModel) -> Result<usize> {
        match self {
            CondBoundary::Before(k) => model.index_of(VarId::state(k)),
            CondBoundary::UpTo(k) => {
                if k >= model.horizon() {
                    Ok(model.n_vars())
                } else {
                    model.index_of(VarId::state(k + 1))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IccParams {
    /// Outer (conditioning) draws.
    pub h1: usize,
    /// Inner (non-conditioning) draws per outer draw.
    pub h2: usize,
    /// Consecutive state variables per attribution group.
    pub grouping: usize,
    pub seed: u64,
}

impl Default for IccParams {
    fn default() -> Self {
        IccParams {
            h1: 100,
            h2: 20,
            grouping: 1,
            seed: 0,
        }
    }
}

/// Shared nested-MC sweep: expected conditional variance of the branch
/// response difference at every requested boundary, on one ensemble of
/// outer/inner posterior draws. Also returns the difference samples of the
/// first boundary (plain posterior samples of the difference).
fn unc_sweep(
    model: &ScmModel,
    query: &EffectQuery,
    cond_lens: &[usize],
    params: &IccParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.h1 < 2 || params.h2 < 2 {
        return Err(CfxError::Config("h1 and h2 must be at least 2".into()));
    }
    let posterior = abduct(model, &query.tau)?;
    let branches = vec![
        branch_do(model, query)?,
        branch_ase(model, query, full_agent_set(model))?,
    ];
    let order = resolve_branch_order(&branches)?;
    let n_vars = model.n_vars();

    struct OuterOut {
        inner_vars: Vec<f64>,
        first_ds: Vec<f64>,
    }

    let outers: Vec<OuterOut> = (0..params.h1)
        .into_par_iter()
        .map(|o| -> Result<OuterOut> {
            let outer_u = posterior_vec(&posterior, params.seed, Stream::CondOuter(o as u64));
            // d[boundary][inner]
            let mut d = vec![Vec::with_capacity(params.h2); cond_lens.len()];
            let mut u = vec![0.0f64; n_vars];
            for i in 0..params.h2 {
                let inner_u = posterior_vec(
                    &posterior,
                    params.seed,
                    Stream::CondInner {
                        outer: o as u64,
                        inner: i as u64,
                    },
                );
                for (c, &len) in cond_lens.iter().enumerate() {
                    u[..len].copy_from_slice(&outer_u[..len]);
                    u[len..].copy_from_slice(&inner_u[len..]);
                    let solved =
                        solve_branches(model, &NoiseVector(u.clone()), &branches, &order)?;
                    let y_do = eval_response(model, &solved[0], &query.response)?;
                    let y_nat = eval_response(model, &solved[1], &query.response)?;
                    d[c].push(y_nat - y_do);
                }
            }
            let inner_vars = d.iter().map(|ds| inner_variance(ds)).collect();
            Ok(OuterOut {
                inner_vars,
                first_ds: d[0].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let unc: Vec<f64> = (0..cond_lens.len())
        .map(|c| neumaier_sum(outers.iter().map(|o| o.inner_vars[c])) / params.h1 as f64)
        .collect();
    let mut first_ds = Vec::with_capacity(params.h1 * params.h2);
    for o in &outers {
        first_ds.extend_from_slice(&o.first_ds);
    }
    Ok((unc, first_ds))
}

fn posterior_vec(
    posterior: &crate::inference::PosteriorMap,
    seed: u64,
    stream: Stream,
) -> Vec<f64> {
    let mut rng = SampleRng::new(seed, stream);
    posterior
        .intervals
        .iter()
        .enumerate()
        .map(|(k, &(lo, hi))| crate::inference::scale_into(rng.u01_at(k), lo, hi))
        .collect()
}

/// Unbiased sample variance. Identical samples short-circuit to exactly
/// zero, so fully-conditioned boundaries report no residual variance.
fn inner_variance(ds: &[f64]) -> f64 {
    let n = ds.len();
    if n < 2 || ds.iter().all(|&d| d.to_bits() == ds[0].to_bits()) {
        return 0.0;
    }
    let mean = neumaier_sum(ds.iter().copied()) / n as f64;
    neumaier_sum(ds.iter().map(|&d| (d - mean) * (d - mean))) / (n - 1) as f64
}

/// Nested Monte Carlo estimate of the expected conditional variance of the
/// branch response difference at one boundary.
pub fn conditional_variance(
    model: &ScmModel,
    query: &EffectQuery,
    boundary: CondBoundary,
    params: &IccParams,
) -> Result<f64> {
    let len = boundary.cond_len(model)?;
    let (unc, _) = unc_sweep(model, query, &[len], params)?;
    Ok(unc[0])
}

/// One attribution group: state variables `k_start..=k_end`.
#[derive(Debug, Clone, Serialize)]
pub struct IccEntry {
    pub k_start: usize,
    pub k_end: usize,
    /// Expected conditional variance given all noise before `k_start`.
    pub unc_before: f64,
    pub icc_raw: f64,
    pub icc_clamped: f64,
    pub psi: f64,
}

/// Attribution of the reverse state-specific effect over the state
/// variables following the intervention.
#[derive(Debug, Clone, Serialize)]
pub struct IccReport {
    pub entries: Vec<IccEntry>,
    /// Total variance of the difference (the first boundary's value).
    pub var_delta: f64,
    /// Residual variance when everything up to the response time is known.
    pub unc_final: f64,
    /// The effect being attributed, estimated on the same ensemble.
    pub r_sse: f64,
    pub r_sse_std_error: f64,
    pub grouping: usize,
    pub h1: usize,
    pub h2: usize,
    /// True when the total variance is below the zero threshold; all psi
    /// are zero and the scores do not sum to the effect.
    pub degenerate: bool,
    /// Gini coefficient of the clamped contribution shares.
    pub gini: f64,
}

impl IccReport {
    /// psi of the group containing state timestep `k`; zero outside the
    /// attributed range.
    pub fn psi_at(&self, k: usize) -> f64 {
        self.entries
            .iter()
            .find(|e| e.k_start <= k && k <= e.k_end)
            .map_or(0.0, |e| e.psi)
    }

    pub fn psi_total(&self) -> f64 {
        neumaier_sum(self.entries.iter().map(|e| e.psi))
    }

    /// Entries whose share of the largest score exceeds `rel_threshold`.
    pub fn support(&self, rel_threshold: f64) -> Vec<usize> {
        let max = self
            .entries
            .iter()
            .map(|e| e.psi.abs())
            .fold(0.0f64, f64::max);
        if max == 0.0 {
            return vec![];
        }
        self.entries
            .iter()
            .filter(|e| e.psi.abs() > rel_threshold * max)
            .map(|e| e.k_start)
            .collect()
    }
}

const VAR_EPSILON: f64 = 1e-12;

/// Score every state variable (or group of consecutive state variables)
/// between the intervention and the response.
pub fn r_sse_icc(model: &ScmModel, query: &EffectQuery, params: &IccParams) -> Result<IccReport> {
    let t = query.time;
    let t_y = query.response.last_time();
    let g = params.grouping.max(1);
    // Group starts t+1, t+1+g, ... and the closing boundary.
    let starts: Vec<usize> = (t + 1..=t_y).step_by(g).collect();
    let mut boundaries: Vec<CondBoundary> =
        starts.iter().map(|&k| CondBoundary::Before(k)).collect();
    boundaries.push(CondBoundary::UpTo(t_y));
    let cond_lens = boundaries
        .iter()
        .map(|b| b.cond_len(model))
        .collect::<Result<Vec<_>>>()?;

    let (unc, ds) = unc_sweep(model, query, &cond_lens, params)?;
    let (r_sse, r_sse_se) = crate::stats::mean_and_se(&ds);

    let var_delta = unc[0];
    let unc_final = *unc.last().unwrap();
    let n_groups = starts.len();
    let icc_raw: Vec<f64> = (0..n_groups).map(|j| unc[j] - unc[j + 1]).collect();
    let icc_clamped: Vec<f64> = icc_raw.iter().map(|&x| x.max(0.0)).collect();
    let total_clamped = neumaier_sum(icc_clamped.iter().copied());

    let degenerate = var_delta <= VAR_EPSILON || total_clamped <= VAR_EPSILON;
    let psi: Vec<f64> = if degenerate {
        vec![0.0; n_groups]
    } else {
        icc_clamped
            .iter()
            .map(|&c| c / total_clamped * r_sse)
            .collect()
    };

    let shares: Vec<f64> = if degenerate {
        vec![]
    } else {
        icc_clamped.iter().map(|&c| c / total_clamped).collect()
    };

    let entries = starts
        .iter()
        .enumerate()
        .map(|(j, &k)| IccEntry {
            k_start: k,
            k_end: (k + g - 1).min(t_y),
            unc_before: unc[j],
            icc_raw: icc_raw[j],
            icc_clamped: icc_clamped[j],
            psi: psi[j],
        })
        .collect();

    Ok(IccReport {
        entries,
        var_delta,
        unc_final,
        r_sse,
        r_sse_std_error: r_sse_se,
        grouping: g,
        h1: params.h1,
        h2: params.h2,
        degenerate,
        gini: gini(&shares),
    })
}

/// Sparse localization for single-spike profiles: binary search for the
/// latest boundary whose remaining variance still exceeds half the total.
/// Uses the monotonicity of the conditional variance in the boundary and
/// costs O(log h) sweeps instead of O(h). Only meaningful when at most one
/// state carries the variance.
pub fn find_icc_spike(
    model: &ScmModel,
    query: &EffectQuery,
    params: &IccParams,
) -> Result<Option<usize>> {
    let t = query.time;
    let t_y = query.response.last_time();
    let var_delta = conditional_variance(model, query, CondBoundary::Before(t + 1), params)?;
    if var_delta <= VAR_EPSILON {
        return Ok(None);
    }
    let mut lo = t + 1; // unc(Before(lo)) is above threshold
    let mut hi = t_y + 1; // treated as the closing boundary, below threshold
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let b = if mid > t_y {
            CondBoundary::UpTo(t_y)
        } else {
            CondBoundary::Before(mid)
        };
        let v = conditional_variance(model, query, b, params)?;
        if v > var_delta / 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}
