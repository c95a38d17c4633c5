//! Shapley attribution of the total agent-specific effect.
//!
//! The characteristic function of the cooperative game is the subset
//! agent-specific effect: v(N) = effect propagating through the subsequent
//! actions of the agents in N. v of the empty set is zero analytically (no
//! grafted actions, everything pinned to factual values reproduces the
//! factual trajectory). All subset evaluations share the same posterior
//! draws, so exact-mode efficiency holds to float rounding in finite
//! samples, not just in expectation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::effects::{ase_subset, EffectEstimate, EffectQuery};
use crate::error::{CfxError, Result};
use crate::rng::aux_rng;
use crate::scm::ScmModel;
use crate::stats::{mean_and_se, neumaier_sum};

/// Largest agent count for exhaustive subset enumeration.
pub const DEFAULT_EXACT_CAP: usize = 12;

/// A cooperative game over agents 1..=n, subsets encoded as bitmasks with
/// bit i-1 for agent i. Implementations memoize their own evaluations.
pub trait Characteristic {
    fn n_agents(&self) -> usize;
    fn value(&mut self, subset: u32) -> Result<EffectEstimate>;
}

/// Characteristic backed by the subset agent-specific effect estimator.
pub struct AseCharacteristic<'a> {
    model: &'a ScmModel,
    query: &'a EffectQuery,
    n_samples: usize,
    seed: u64,
    cache: BTreeMap<u32, EffectEstimate>,
}

impl<'a> AseCharacteristic<'a> {
    pub fn new(
        model: &'a ScmModel,
        query: &'a EffectQuery,
        n_samples: usize,
        seed: u64,
    ) -> AseCharacteristic<'a> {
        AseCharacteristic {
            model,
            query,
            n_samples,
            seed,
            cache: BTreeMap::new(),
        }
    }
}

impl Characteristic for AseCharacteristic<'_> {
    fn n_agents(&self) -> usize {
        self.model.n_agents()
    }

    fn value(&mut self, subset: u32) -> Result<EffectEstimate> {
        if let Some(hit) = self.cache.get(&subset) {
            return Ok(hit.clone());
        }
        let est = ase_subset(self.model, self.query, subset, self.n_samples, self.seed)?;
        self.cache.insert(subset, est.clone());
        Ok(est)
    }
}

/// Characteristic given by an explicit table (synthetic games in tests and
/// validation suites).
pub struct TableCharacteristic {
    pub n: usize,
    pub table: BTreeMap<u32, f64>,
}

impl Characteristic for TableCharacteristic {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn value(&mut self, subset: u32) -> Result<EffectEstimate> {
        let v = *self
            .table
            .get(&subset)
            .ok_or_else(|| CfxError::Config(format!("no table entry for subset {subset:b}")))?;
        Ok(EffectEstimate {
            mean: v,
            std_error: 0.0,
            n_samples: 0,
            per_sample: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    Exact,
    Sampled,
}

/// Per-agent contribution scores with the characteristic values they were
/// computed from.
#[derive(Debug, Clone, Serialize)]
pub struct ShapleyReport {
    /// phi[agent] for agents 1..=n (index 0 = agent 1).
    pub phi: Vec<f64>,
    /// Evaluated subsets, keyed by a canonical "1+3" style string.
    pub characteristic: BTreeMap<String, EffectEstimate>,
    pub mode: ShapleyMode,
    pub permutations_used: usize,
    /// Bootstrap standard errors of phi (sampled mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_std_error: Option<Vec<f64>>,
    /// The empty set is defined as zero by factual reproduction rather than
    /// evaluated; recorded because the subset effect is otherwise defined
    /// for non-empty sets only.
    pub empty_set_defined_zero: bool,
}

impl ShapleyReport {
    pub fn total(&self) -> f64 {
        neumaier_sum(self.phi.iter().copied())
    }

    pub fn grand_coalition(&self) -> f64 {
        let n = self.phi.len();
        self.characteristic[&subset_key((1u32 << n) - 1, n)].mean
    }
}

pub fn subset_key(subset: u32, n: usize) -> String {
    let members: Vec<String> = (1..=n)
        .filter(|i| subset & (1 << (i - 1)) != 0)
        .map(|i| i.to_string())
        .collect();
    if members.is_empty() {
        "none".into()
    } else {
        members.join("+")
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Exhaustive Shapley values: evaluates v on all 2^n subsets and combines
/// marginal contributions with weights |S|! (n-|S|-1)! / n!.
pub fn shapley_exact(chi: &mut dyn Characteristic) -> Result<ShapleyReport> {
    let n = chi.n_agents();
    if n > DEFAULT_EXACT_CAP {
        return Err(CfxError::Config(format!(
            "{n} agents exceed the exact enumeration cap of {DEFAULT_EXACT_CAP}; use sampled mode"
        )));
    }
    let full = (1u32 << n) - 1;
    let mut values: BTreeMap<u32, EffectEstimate> = BTreeMap::new();
    values.insert(0, EffectEstimate::exact_zero());
    for subset in 1..=full {
        values.insert(subset, chi.value(subset)?);
    }
    let n_fact = factorial(n);
    let mut phi = vec![0.0f64; n];
    for (agent, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1u32 << agent;
        let mut terms = Vec::new();
        for subset in 0..=full {
            if subset & bit != 0 {
                continue;
            }
            let s = subset.count_ones() as usize;
            let w = factorial(s) * factorial(n - s - 1) / n_fact;
            terms.push(w * (values[&(subset | bit)].mean - values[&subset].mean));
        }
        *phi_j = neumaier_sum(terms.into_iter());
    }
    Ok(ShapleyReport {
        phi,
        characteristic: values
            .into_iter()
            .map(|(s, e)| (subset_key(s, n), e))
            .collect(),
        mode: ShapleyMode::Exact,
        permutations_used: 0,
        phi_std_error: None,
        empty_set_defined_zero: true,
    })
}

/// Permutation-sampling Shapley values. Marginal contributions along each
/// permutation telescope to v(full set), so the scores sum to the grand
/// coalition value exactly regardless of the budget. Subset evaluations are
/// memoized across permutations. Bootstrap standard errors are computed by
/// resampling permutations.
pub fn shapley_sampled(
    chi: &mut dyn Characteristic,
    permutation_budget: usize,
    seed: u64,
) -> Result<ShapleyReport> {
    if permutation_budget == 0 {
        return Err(CfxError::Config("permutation budget must be positive".into()));
    }
    let n = chi.n_agents();
    let mut values: BTreeMap<u32, EffectEstimate> = BTreeMap::new();
    values.insert(0, EffectEstimate::exact_zero());
    let mut value_of = |subset: u32, chi: &mut dyn Characteristic| -> Result<f64> {
        if let Some(hit) = values.get(&subset) {
            return Ok(hit.mean);
        }
        let est = chi.value(subset)?;
        let mean = est.mean;
        values.insert(subset, est);
        Ok(mean)
    };

    let mut rng = aux_rng(seed, 0x5AB1);
    let mut agents: Vec<usize> = (0..n).collect();
    // Per-permutation marginal vectors, for the bootstrap.
    let mut marginals: Vec<Vec<f64>> = Vec::with_capacity(permutation_budget);
    for _ in 0..permutation_budget {
        agents.shuffle(&mut rng);
        let mut prefix = 0u32;
        let mut row = vec![0.0; n];
        for &a in &agents {
            let before = value_of(prefix, chi)?;
            prefix |= 1 << a;
            let after = value_of(prefix, chi)?;
            row[a] = after - before;
        }
        marginals.push(row);
    }
    let phi: Vec<f64> = (0..n)
        .map(|a| {
            neumaier_sum(marginals.iter().map(|m| m[a])) / permutation_budget as f64
        })
        .collect();

    // Bootstrap over permutations.
    let boots = 200;
    let mut boot_phi: Vec<Vec<f64>> = vec![Vec::with_capacity(boots); n];
    let mut brng = aux_rng(seed, 0xB007);
    for _ in 0..boots {
        let mut sums = vec![0.0f64; n];
        for _ in 0..permutation_budget {
            let pick = rand::Rng::random_range(&mut brng, 0..permutation_budget);
            for a in 0..n {
                sums[a] += marginals[pick][a];
            }
        }
        for a in 0..n {
            boot_phi[a].push(sums[a] / permutation_budget as f64);
        }
    }
    let phi_std_error: Vec<f64> = boot_phi
        .iter()
        .map(|xs| {
            let (_, se) = mean_and_se(xs);
            se * (xs.len() as f64).sqrt() // std of the bootstrap distribution
        })
        .collect();

    Ok(ShapleyReport {
        phi,
        characteristic: values
            .into_iter()
            .map(|(s, e)| (subset_key(s, n), e))
            .collect(),
        mode: ShapleyMode::Sampled,
        permutations_used: permutation_budget,
        phi_std_error: Some(phi_std_error),
        empty_set_defined_zero: true,
    })
}
