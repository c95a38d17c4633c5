//! JSON file formats: structural models, MDP specs and trajectories.
//!
//! Probabilities in files may be JSON numbers, decimal strings ("0.25") or
//! rational strings ("1/3"). Documents carry a `kind` discriminator so the
//! CLI can accept any of them through one flag.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CfxError, Result};
use crate::mmdp::{DeviationSet, MmdpSpec, OrderingSpec, PolicySet};
use crate::scm::{Cpd, ScmBuilder, ScmModel, Trajectory, VarId};

/// A probability that may be written as a number, decimal string or
/// "numerator/denominator" rational.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbValue {
    Number(f64),
    Text(String),
}

impl ProbValue {
    pub fn to_f64(&self) -> Result<f64> {
        match self {
            ProbValue::Number(x) => Ok(*x),
            ProbValue::Text(s) => parse_prob(s),
        }
    }
}

pub fn parse_prob(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|_| CfxError::Parse(format!("bad rational '{s}'")))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|_| CfxError::Parse(format!("bad rational '{s}'")))?;
        if d == 0.0 {
            return Err(CfxError::Parse(format!("zero denominator in '{s}'")));
        }
        return Ok(n / d);
    }
    s.parse()
        .map_err(|_| CfxError::Parse(format!("bad probability '{s}'")))
}

fn probs_to_f64(ps: &[ProbValue]) -> Result<Vec<f64>> {
    ps.iter().map(|p| p.to_f64()).collect()
}

/// On-disk structural model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmFile {
    pub kind: String,
    pub agents: usize,
    pub horizon: usize,
    /// CPDs keyed by variable id ("S0", "A1t0", ...).
    pub cpds: BTreeMap<String, CpdFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpdFile {
    pub domain: Vec<String>,
    /// Optional total ordering: permutation of the domain labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<Vec<String>>,
    pub rows: Vec<CpdRowFile>,
    /// Optional numeric valuation per category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpdRowFile {
    /// Parent values by label, in causal parent order (previous state, then
    /// the actions taken in it; empty for the initial state).
    pub given: Vec<String>,
    pub p: Vec<ProbValue>,
}

pub fn scm_from_file(doc: &ScmFile) -> Result<ScmModel> {
    if doc.kind != "scm" {
        return Err(CfxError::Parse(format!("expected kind 'scm', got '{}'", doc.kind)));
    }
    let mut builder = ScmBuilder::new(doc.agents, doc.horizon);
    // First pass: build all Cpds (domains needed to resolve parent labels).
    let mut domains: BTreeMap<VarId, Vec<String>> = BTreeMap::new();
    for (name, cf) in &doc.cpds {
        domains.insert(VarId::parse(name)?, cf.domain.clone());
    }
    let parent_ids = |var: VarId| -> Vec<VarId> {
        match var {
            VarId::State { time: 0 } => vec![],
            VarId::State { time } => {
                let mut ps = vec![VarId::state(time - 1)];
                for i in 1..=doc.agents {
                    ps.push(VarId::action(i, time - 1));
                }
                ps
            }
            VarId::Action { time, .. } => vec![VarId::state(time)],
        }
    };
    for (name, cf) in &doc.cpds {
        let var = VarId::parse(name)?;
        let mut cpd = Cpd::new(cf.domain.clone());
        if let Some(ordering) = &cf.ordering {
            let perm = ordering
                .iter()
                .map(|l| {
                    cpd.index_of_label(l).ok_or_else(|| {
                        CfxError::Parse(format!("ordering label '{l}' not in domain of {name}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cpd = cpd.with_ordering(perm)?;
        }
        let parents = parent_ids(var);
        for row in &cf.rows {
            if row.given.len() != parents.len() {
                return Err(CfxError::Parse(format!(
                    "row for {name} has {} parent values, expected {}",
                    row.given.len(),
                    parents.len()
                )));
            }
            let key = parents
                .iter()
                .zip(&row.given)
                .map(|(p, label)| {
                    let dom = domains.get(p).ok_or_else(|| {
                        CfxError::Parse(format!("missing CPD for parent {p} of {name}"))
                    })?;
                    dom.iter()
                        .position(|l| l == label)
                        .map(|i| i as u32)
                        .ok_or_else(|| {
                            CfxError::Parse(format!("label '{label}' not in domain of {p}"))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            cpd.insert_row(key, &probs_to_f64(&row.p)?)?;
        }
        builder.set_cpd(var, cpd);
        if let Some(values) = &cf.values {
            builder.set_values(var, values.clone());
        }
    }
    builder.build()
}

/// On-disk MDP spec: states, per-agent actions, sparse transition triplets,
/// horizon, initial distribution and policies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmdpFile {
    pub kind: String,
    pub states: Vec<String>,
    pub agents: usize,
    pub actions: Vec<Vec<String>>,
    pub horizon: usize,
    pub initial: BTreeMap<String, ProbValue>,
    pub transition: Vec<TransitionRowFile>,
    pub policies: Vec<PolicyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRowFile {
    pub s: String,
    pub a: Vec<String>,
    pub p: BTreeMap<String, ProbValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub agent: usize,
    pub rows: Vec<PolicyRowFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRowFile {
    pub s: String,
    pub p: BTreeMap<String, ProbValue>,
}

pub fn mmdp_from_file(doc: &MmdpFile) -> Result<(MmdpSpec, PolicySet)> {
    if doc.kind != "mmdp" {
        return Err(CfxError::Parse(format!(
            "expected kind 'mmdp', got '{}'",
            doc.kind
        )));
    }
    let state_index = |label: &str| -> Result<usize> {
        doc.states
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| CfxError::Parse(format!("unknown state '{label}'")))
    };
    let mut initial = vec![0.0; doc.states.len()];
    for (label, p) in &doc.initial {
        initial[state_index(label)?] = p.to_f64()?;
    }
    let mut transition = BTreeMap::new();
    for row in &doc.transition {
        if row.a.len() != doc.agents {
            return Err(CfxError::Parse(format!(
                "transition row for '{}' has {} actions, expected {}",
                row.s,
                row.a.len(),
                doc.agents
            )));
        }
        let s = state_index(&row.s)? as u32;
        let a = row
            .a
            .iter()
            .enumerate()
            .map(|(i, label)| {
                doc.actions[i]
                    .iter()
                    .position(|x| x == label)
                    .map(|k| k as u32)
                    .ok_or_else(|| {
                        CfxError::Parse(format!("unknown action '{label}' for agent {}", i + 1))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sparse = Vec::with_capacity(row.p.len());
        for (label, p) in &row.p {
            sparse.push((state_index(label)? as u32, p.to_f64()?));
        }
        sparse.sort_by_key(|&(i, _)| i);
        transition.insert((s, a), sparse);
    }
    let mut rows: Vec<BTreeMap<u32, Vec<f64>>> = vec![BTreeMap::new(); doc.agents];
    for pf in &doc.policies {
        if pf.agent == 0 || pf.agent > doc.agents {
            return Err(CfxError::Parse(format!("bad policy agent {}", pf.agent)));
        }
        for row in &pf.rows {
            let s = state_index(&row.s)? as u32;
            let mut dense = vec![0.0; doc.actions[pf.agent - 1].len()];
            for (label, p) in &row.p {
                let k = doc.actions[pf.agent - 1]
                    .iter()
                    .position(|x| x == label)
                    .ok_or_else(|| {
                        CfxError::Parse(format!("unknown action '{label}' in policy"))
                    })?;
                dense[k] = p.to_f64()?;
            }
            rows[pf.agent - 1].insert(s, dense);
        }
    }
    let state_values = match &doc.values {
        Some(map) => {
            let mut v = vec![0.0; doc.states.len()];
            for (label, x) in map {
                v[state_index(label)?] = *x;
            }
            Some(v)
        }
        None => None,
    };
    let spec = MmdpSpec {
        states: doc.states.clone(),
        n_agents: doc.agents,
        action_spaces: doc.actions.clone(),
        transition,
        horizon: doc.horizon,
        initial,
        state_values,
    };
    Ok((spec, PolicySet { rows }))
}

/// On-disk trajectory: variable id -> value label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub kind: String,
    pub values: BTreeMap<String, String>,
}

pub fn trajectory_from_file(doc: &TrajectoryFile, model: &ScmModel) -> Result<Trajectory> {
    if doc.kind != "trajectory" {
        return Err(CfxError::Parse(format!(
            "expected kind 'trajectory', got '{}'",
            doc.kind
        )));
    }
    let mut values = vec![None; model.n_vars()];
    for (name, label) in &doc.values {
        let idx = model.index_of(VarId::parse(name)?)?;
        let cat = model.cpd(idx).index_of_label(label).ok_or_else(|| {
            CfxError::Parse(format!("label '{label}' not in domain of {name}"))
        })?;
        values[idx] = Some(cat);
    }
    let cats = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| CfxError::Parse(format!("trajectory missing {}", model.var(i))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory(cats))
}

/// Re-index a trajectory from one model into another by value labels.
/// Used to carry one factual trajectory across model variants (e.g. a
/// trust sweep), whose state enumerations may differ.
pub fn transport_trajectory(
    from: &ScmModel,
    tau: &Trajectory,
    to: &ScmModel,
) -> Result<Trajectory> {
    trajectory_from_file(&trajectory_to_file(from, tau), to)
}

pub fn trajectory_to_file(model: &ScmModel, tau: &Trajectory) -> TrajectoryFile {
    TrajectoryFile {
        kind: "trajectory".into(),
        values: (0..model.n_vars())
            .map(|i| (model.var(i).to_string(), model.label(i, tau.cat(i)).to_string()))
            .collect(),
    }
}

/// Any document the CLI accepts through --model.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Scm(ScmFile),
    Mmdp(MmdpFile),
}

/// Parse a model document, compiling MDP specs with every action
/// materialized (file-based models are small by design).
pub fn load_model(text: &str) -> Result<(ScmModel, Option<(MmdpSpec, PolicySet)>)> {
    let kind: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CfxError::Parse(e.to_string()))?;
    match kind.get("kind").and_then(|k| k.as_str()) {
        Some("scm") => {
            let doc: ScmFile =
                serde_json::from_str(text).map_err(|e| CfxError::Parse(e.to_string()))?;
            Ok((scm_from_file(&doc)?, None))
        }
        Some("mmdp") => {
            let doc: MmdpFile =
                serde_json::from_str(text).map_err(|e| CfxError::Parse(e.to_string()))?;
            let (spec, pi) = mmdp_from_file(&doc)?;
            let model = crate::mmdp::compile(
                &spec,
                &pi,
                &OrderingSpec::none(),
                &DeviationSet::all(),
            )?;
            Ok((model, Some((spec, pi))))
        }
        other => Err(CfxError::Parse(format!(
            "unknown or missing document kind {other:?}"
        ))),
    }
}
