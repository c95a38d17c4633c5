//! Sepsis-style two-agent treatment simulator.
//!
//! An AI recommends one of eight treatments (on/off combinations of
//! antibiotics, vasopressors and ventilation) each round; a clinician
//! reviews the recommendation and either defers to it or overrides it with
//! their own preferred treatment. Rounds are modeled as two steps — an AI
//! turn that embeds the recommendation in the state, then a clinician turn
//! whose action resolves the applied treatment — so both agents act on the
//! current state only. The probability of an override is `(1 - trust) * q`
//! with `q = 1` exactly on states where the clinician's preference
//! disagrees with the recommendation; at full trust the clinician's policy
//! is the identity on the recommendation.
//!
//! The patient is a pair of discretized vitals (heart rate, blood
//! pressure) that random-walk under treatment-dependent drifts, with
//! absorbing death and discharge. The outcome of an episode is success if
//! the patient survives every round or is discharged early. The dynamics
//! interface matches the two-agent sepsis setup (eight treatments, twenty
//! rounds, a trust parameter); the drift and risk numbers are this
//! artifact's own configuration.

use serde::{Deserialize, Serialize};

use crate::effects::{EffectQuery, ResponseSpec};
use crate::error::{CfxError, Result};
use crate::mmdp::{compile, consistency_check, DeviationSet, MmdpSpec, OrderingSpec, PolicySet};
use crate::scm::{ScmModel, Trajectory, VarId};

use super::{assemble, Dynamics};

pub const N_TREATMENTS: usize = 8;

pub const TREATMENT_LABELS: [&str; N_TREATMENTS] =
    ["none", "a", "v", "e", "av", "ae", "ve", "ave"];

/// Treatment bitmask: bit 0 antibiotics, bit 1 vasopressors, bit 2
/// ventilation.
fn treatment_mask(index: usize) -> u8 {
    match index {
        0 => 0b000,
        1 => 0b001,
        2 => 0b010,
        3 => 0b100,
        4 => 0b011,
        5 => 0b101,
        6 => 0b110,
        7 => 0b111,
        _ => unreachable!(),
    }
}

const ABX: u8 = 0b001;
const VASO: u8 = 0b010;
const VENT: u8 = 0b100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Lo,
    Mid,
    Hi,
}

impl Level {
    fn short(self) -> char {
        match self {
            Level::Lo => 'L',
            Level::Mid => 'M',
            Level::Hi => 'H',
        }
    }

    fn shifted(self, by: i8) -> Level {
        match (self, by) {
            (Level::Lo, 1) | (Level::Hi, -1) => Level::Mid,
            (Level::Mid, 1) => Level::Hi,
            (Level::Mid, -1) => Level::Lo,
            (l, _) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Patient {
    pub hr: Level,
    pub bp: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    /// The AI is about to recommend.
    AiTurn,
    /// The clinician reviews recommendation `rec` (treatment index).
    ClTurn { rec: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SepsisState {
    Active { patient: Patient, phase: Phase },
    Discharged,
    Dead,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SepsisConfig {
    /// Clinician trust in the AI, in [0, 1]; override probability is
    /// (1 - trust) * q(state).
    pub trust: f64,
    pub rounds: usize,
    /// Per-vital drift (down, stay, up) without treatment.
    pub hr_base: (f64, f64, f64),
    pub bp_base: (f64, f64, f64),
    /// Probability mass antibiotics move from "up" to "down" on heart rate.
    pub abx_hr_shift: f64,
    /// Mass vasopressors move from "down" to "up" on blood pressure.
    pub vaso_bp_shift: f64,
    /// Mass ventilation moves from each direction to "stay", both vitals.
    pub vent_calm: f64,
    /// Death probability per round by number of out-of-range vitals.
    pub death_by_extremes: (f64, f64, f64),
    /// Multiplier on death probability when ventilated.
    pub vent_death_factor: f64,
    /// Discharge probability when both vitals are in range.
    pub discharge_prob: f64,
}

impl SepsisConfig {
    pub fn preset(trust: f64) -> SepsisConfig {
        SepsisConfig {
            trust,
            rounds: 20,
            hr_base: (0.15, 0.55, 0.30),
            bp_base: (0.30, 0.55, 0.15),
            abx_hr_shift: 0.25,
            vaso_bp_shift: 0.25,
            vent_calm: 0.10,
            death_by_extremes: (0.005, 0.08, 0.30),
            vent_death_factor: 0.4,
            discharge_prob: 0.25,
        }
    }

    /// Small horizon variant for fast suites.
    pub fn compact(trust: f64, rounds: usize) -> SepsisConfig {
        SepsisConfig {
            rounds,
            ..SepsisConfig::preset(trust)
        }
    }

    pub fn from_json(text: &str) -> Result<SepsisConfig> {
        serde_json::from_str(text).map_err(|e| CfxError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.trust) {
            return Err(CfxError::Config(format!("trust {} outside [0,1]", self.trust)));
        }
        if self.rounds == 0 {
            return Err(CfxError::Config("need at least one round".into()));
        }
        for (name, dist) in [("hr_base", self.hr_base), ("bp_base", self.bp_base)] {
            let sum = dist.0 + dist.1 + dist.2;
            if dist.0 < 0.0 || dist.1 < 0.0 || dist.2 < 0.0 || (sum - 1.0).abs() > 1e-12 {
                return Err(CfxError::Config(format!("{name} is not a distribution")));
            }
        }
        Ok(())
    }

    /// Recommendation policy: antibiotics when heart rate is out of range,
    /// vasopressors for low pressure, ventilation in a double-high crisis.
    pub fn ai_treatment(&self, p: Patient) -> usize {
        let mut mask = 0u8;
        if p.hr != Level::Mid {
            mask |= ABX;
        }
        if p.bp == Level::Lo {
            mask |= VASO;
        }
        if p.hr == Level::Hi && p.bp == Level::Hi {
            mask |= VENT;
        }
        (0..N_TREATMENTS)
            .find(|&i| treatment_mask(i) == mask)
            .unwrap()
    }

    /// The clinician's own choice: vasopressors whenever pressure is out of
    /// range (in either direction), antibiotics for heart rate.
    pub fn clinician_preference(&self, p: Patient) -> usize {
        let mut mask = 0u8;
        if p.bp != Level::Mid {
            mask |= VASO;
        }
        if p.hr != Level::Mid {
            mask |= ABX;
        }
        (0..N_TREATMENTS)
            .find(|&i| treatment_mask(i) == mask)
            .unwrap()
    }

    /// Disagreement indicator driving the override probability.
    pub fn q(&self, patient: Patient, rec: u8) -> f64 {
        if self.clinician_preference(patient) as u8 == rec {
            0.0
        } else {
            1.0
        }
    }

    pub fn override_prob(&self, patient: Patient, rec: u8) -> f64 {
        (1.0 - self.trust) * self.q(patient, rec)
    }

    fn vital_dist(&self, base: (f64, f64, f64), level: Level, applied: u8, vital_is_hr: bool) -> Vec<(Level, f64)> {
        let (mut down, mut stay, mut up) = base;
        if vital_is_hr && applied & ABX != 0 {
            let moved = self.abx_hr_shift.min(up);
            up -= moved;
            down += moved;
        }
        if !vital_is_hr && applied & VASO != 0 {
            let moved = self.vaso_bp_shift.min(down);
            down -= moved;
            up += moved;
        }
        if applied & VENT != 0 {
            let d = self.vent_calm.min(down);
            let u = self.vent_calm.min(up);
            down -= d;
            up -= u;
            stay += d + u;
        }
        // Boundary levels fold the outward move onto staying.
        let mut out: Vec<(Level, f64)> = Vec::with_capacity(3);
        for (lvl, p) in [
            (level.shifted(-1), down),
            (level, stay),
            (level.shifted(1), up),
        ] {
            if p > 0.0 {
                match out.iter_mut().find(|(l, _)| *l == lvl) {
                    Some((_, q)) => *q += p,
                    None => out.push((lvl, p)),
                }
            }
        }
        out
    }

    fn death_prob(&self, p: Patient, applied: u8) -> f64 {
        let extremes = (p.hr != Level::Mid) as usize + (p.bp != Level::Mid) as usize;
        let base = match extremes {
            0 => self.death_by_extremes.0,
            1 => self.death_by_extremes.1,
            _ => self.death_by_extremes.2,
        };
        if applied & VENT != 0 {
            base * self.vent_death_factor
        } else {
            base
        }
    }
}

struct SepsisDynamics<'c> {
    config: &'c SepsisConfig,
}

pub const AI: usize = 1;
pub const CLINICIAN: usize = 2;
/// Clinician action index meaning "apply the recommendation unchanged".
/// Held first in the domain so that rising trust shrinks the override
/// noise region monotonically under shared noise.
pub const DEFER: u32 = 0;
/// AI off-turn action.
pub const AI_NULL: u32 = 0;

impl SepsisDynamics<'_> {
    fn treatment_outcome(&self, p: Patient, applied: u8) -> Vec<(SepsisState, f64)> {
        let cfg = self.config;
        let hr_moves = cfg.vital_dist(cfg.hr_base, p.hr, applied, true);
        let bp_moves = cfg.vital_dist(cfg.bp_base, p.bp, applied, false);
        let mut out = Vec::new();
        for &(hr, ph) in &hr_moves {
            for &(bp, pb) in &bp_moves {
                let joint = ph * pb;
                let next = Patient { hr, bp };
                let d = cfg.death_prob(next, applied);
                if d > 0.0 {
                    push(&mut out, SepsisState::Dead, joint * d);
                }
                let live = joint * (1.0 - d);
                let c = if next.hr == Level::Mid && next.bp == Level::Mid {
                    cfg.discharge_prob
                } else {
                    0.0
                };
                if c > 0.0 {
                    push(&mut out, SepsisState::Discharged, live * c);
                }
                let stay = live * (1.0 - c);
                if stay > 0.0 {
                    push(
                        &mut out,
                        SepsisState::Active {
                            patient: next,
                            phase: Phase::AiTurn,
                        },
                        stay,
                    );
                }
            }
        }
        out
    }
}

fn push(out: &mut Vec<(SepsisState, f64)>, s: SepsisState, p: f64) {
    match out.iter_mut().find(|(x, _)| *x == s) {
        Some((_, q)) => *q += p,
        None => out.push((s, p)),
    }
}

impl Dynamics for SepsisDynamics<'_> {
    type State = SepsisState;

    fn n_agents(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        2 * self.config.rounds
    }

    fn action_labels(&self, agent: usize) -> Vec<String> {
        let mut labels = vec![if agent == AI { "null" } else { "defer" }.to_string()];
        labels.extend(TREATMENT_LABELS.iter().map(|s| s.to_string()));
        labels
    }

    fn label(&self, s: &SepsisState) -> String {
        match s {
            SepsisState::Dead => "dead".into(),
            SepsisState::Discharged => "discharged".into(),
            SepsisState::Active { patient, phase } => match phase {
                Phase::AiTurn => format!("p:{}{}|ai", patient.hr.short(), patient.bp.short()),
                Phase::ClTurn { rec } => format!(
                    "p:{}{}|cl:{}",
                    patient.hr.short(),
                    patient.bp.short(),
                    TREATMENT_LABELS[*rec as usize]
                ),
            },
        }
    }

    fn value_deci(&self, s: &SepsisState) -> i64 {
        // Success indicator: alive or discharged.
        match s {
            SepsisState::Dead => 0,
            _ => 10,
        }
    }

    fn initial(&self) -> Vec<(SepsisState, f64)> {
        // Admission: heart rate elevated, pressure low or normal.
        vec![
            (
                SepsisState::Active {
                    patient: Patient {
                        hr: Level::Hi,
                        bp: Level::Mid,
                    },
                    phase: Phase::AiTurn,
                },
                0.5,
            ),
            (
                SepsisState::Active {
                    patient: Patient {
                        hr: Level::Hi,
                        bp: Level::Lo,
                    },
                    phase: Phase::AiTurn,
                },
                0.5,
            ),
        ]
    }

    fn policy(&self, agent: usize, s: &SepsisState) -> Vec<(u32, f64)> {
        match s {
            SepsisState::Dead | SepsisState::Discharged => vec![(0, 1.0)],
            SepsisState::Active { patient, phase } => match (agent, phase) {
                (AI, Phase::AiTurn) => {
                    vec![(self.config.ai_treatment(*patient) as u32 + 1, 1.0)]
                }
                (AI, Phase::ClTurn { .. }) => vec![(AI_NULL, 1.0)],
                (_, Phase::AiTurn) => vec![(DEFER, 1.0)],
                (_, Phase::ClTurn { rec }) => {
                    let q = self.config.override_prob(*patient, *rec);
                    let pref = self.config.clinician_preference(*patient) as u32 + 1;
                    if q <= 0.0 {
                        vec![(DEFER, 1.0)]
                    } else if q >= 1.0 {
                        vec![(pref, 1.0)]
                    } else {
                        vec![(DEFER, 1.0 - q), (pref, q)]
                    }
                }
            },
        }
    }

    fn extras(&self, agent: usize, t: usize) -> Vec<u32> {
        // Alternative actions are materialized on each agent's own turns.
        let on_turn = if agent == AI { t % 2 == 0 } else { t % 2 == 1 };
        if on_turn {
            (1..=N_TREATMENTS as u32).collect()
        } else {
            vec![]
        }
    }

    fn step(&self, s: &SepsisState, joint: &[u32]) -> Vec<(SepsisState, f64)> {
        let (ai, cl) = (joint[0], joint[1]);
        match s {
            SepsisState::Dead => vec![(SepsisState::Dead, 1.0)],
            SepsisState::Discharged => vec![(SepsisState::Discharged, 1.0)],
            SepsisState::Active { patient, phase } => match phase {
                Phase::AiTurn => {
                    // The recommendation enters the state; a null
                    // recommendation repeats the baseline treatment.
                    let rec = if ai == AI_NULL { 0 } else { (ai - 1) as u8 };
                    vec![(
                        SepsisState::Active {
                            patient: *patient,
                            phase: Phase::ClTurn { rec },
                        },
                        1.0,
                    )]
                }
                Phase::ClTurn { rec } => {
                    let applied_index = if cl == DEFER { *rec } else { (cl - 1) as u8 };
                    let applied = treatment_mask(applied_index as usize);
                    self.treatment_outcome(*patient, applied)
                }
            },
        }
    }
}

pub struct SepsisEnv {
    pub config: SepsisConfig,
    pub mmdp: MmdpSpec,
    pub policies: PolicySet,
    pub deviations: DeviationSet,
    pub model: ScmModel,
    pub states: Vec<SepsisState>,
}

pub fn build_sepsis(config: SepsisConfig) -> Result<SepsisEnv> {
    build_sepsis_ordered(config, &OrderingSpec::none())
}

pub fn build_sepsis_ordered(config: SepsisConfig, orderings: &OrderingSpec) -> Result<SepsisEnv> {
    config.validate()?;
    let dynamics = SepsisDynamics { config: &config };
    let (mmdp, policies, deviations, states) = assemble(&dynamics)?;
    let model = compile(&mmdp, &policies, orderings, &deviations)?;
    let report = consistency_check(&model, &mmdp, &policies)?;
    if !report.passed() {
        return Err(CfxError::Inconsistent(format!(
            "compiled sepsis model deviates by {}",
            report.max_deviation
        )));
    }
    Ok(SepsisEnv {
        config,
        mmdp,
        policies,
        deviations,
        model,
        states,
    })
}

impl SepsisEnv {
    pub fn state(&self, cat: u32) -> &SepsisState {
        &self.states[cat as usize]
    }

    /// Success indicator of the final state.
    pub fn response(&self) -> ResponseSpec {
        ResponseSpec::state(VarId::state(self.model.horizon()))
    }

    fn final_state(&self, tau: &Trajectory) -> Result<&SepsisState> {
        let idx = self.model.index_of(VarId::state(self.model.horizon()))?;
        Ok(self.state(tau.cat(idx)))
    }

    /// Whether the factual trajectory is consistent under every trust
    /// level: the clinician must have deferred throughout with zero
    /// disagreement, so its observed actions have probability one
    /// regardless of trust.
    pub fn trust_invariant(&self, tau: &Trajectory) -> Result<bool> {
        for t in 0..self.model.horizon() {
            let aidx = self.model.index_of(VarId::action(CLINICIAN, t))?;
            if tau.cat(aidx) != DEFER {
                return Ok(false);
            }
            let sidx = self.model.index_of(VarId::state(t))?;
            if let SepsisState::Active {
                patient,
                phase: Phase::ClTurn { rec },
            } = self.state(tau.cat(sidx))
            {
                if self.config.q(*patient, *rec) > 0.0 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Deterministic search for a demonstration query: a failed trajectory,
    /// consistent under every trust level, together with an intervention on
    /// `agent`'s action whose quick effect estimate is largest (stopping
    /// early beyond `threshold`). At least `min_rounds_after` full rounds
    /// must remain after the intervention so that downstream agents can
    /// respond.
    pub fn find_preset_query(
        &self,
        agent: usize,
        search_seed: u64,
        max_candidates: u64,
        threshold: f64,
        min_rounds_after: usize,
    ) -> Result<(Trajectory, EffectQuery)> {
        self.find_preset_query_filtered(agent, search_seed, max_candidates, threshold, min_rounds_after, 0.0)
    }

    /// Like [`Self::find_preset_query`] but requiring the `do` branch to
    /// visit clinician-turn states with disagreement on at least
    /// `min_channel_rate` of a quick posterior ensemble. Only such queries
    /// exercise the trust-sensitive override channel; without the
    /// requirement the best-effect query is typically one whose
    /// counterfactuals never give the clinician a choice to make.
    pub fn find_preset_query_filtered(
        &self,
        agent: usize,
        search_seed: u64,
        max_candidates: u64,
        threshold: f64,
        min_rounds_after: usize,
        min_channel_rate: f64,
    ) -> Result<(Trajectory, EffectQuery)> {
        let mut best: Option<(f64, Trajectory, EffectQuery)> = None;
        let parity = if agent == AI { 0 } else { 1 };
        for k in 0..max_candidates {
            let (_, tau) = self.model.sample_prior_indexed(search_seed, k)?;
            if !matches!(self.final_state(&tau)?, SepsisState::Dead) {
                continue;
            }
            if !self.trust_invariant(&tau)? {
                continue;
            }
            // The agents can only respond while the patient is alive, so
            // the intervention must leave full rounds before the factual
            // death (the round difference of the query).
            let death_step = (0..=self.model.horizon())
                .find(|&t| {
                    let sidx = self.model.index_of(VarId::state(t)).unwrap();
                    matches!(self.state(tau.cat(sidx)), SepsisState::Dead)
                })
                .unwrap_or(self.model.horizon());
            let latest = match death_step.checked_sub(2 * min_rounds_after + 1) {
                Some(x) => x,
                None => continue,
            };
            for t in (parity..=latest).step_by(2) {
                let sidx = self.model.index_of(VarId::state(t))?;
                if !matches!(self.state(tau.cat(sidx)), SepsisState::Active { .. }) {
                    break;
                }
                let aidx = self.model.index_of(VarId::action(agent, t))?;
                let factual = tau.cat(aidx);
                for alt in 1..=N_TREATMENTS as u32 {
                    if alt == factual {
                        continue;
                    }
                    let query =
                        EffectQuery::new(&self.model, &tau, agent, t, alt, self.response())?;
                    if min_channel_rate > 0.0
                        && self.channel_rate(&query, 50, search_seed)? < min_channel_rate
                    {
                        continue;
                    }
                    let quick = crate::effects::tcfe(&self.model, &query, 40, search_seed)?;
                    if best.as_ref().is_none_or(|(b, _, _)| quick.mean > *b) {
                        best = Some((quick.mean, tau.clone(), query));
                    }
                    if let Some((b, _, _)) = &best {
                        if *b >= threshold {
                            let (_, tau, query) = best.unwrap();
                            return Ok((tau, query));
                        }
                    }
                }
            }
        }
        best.map(|(_, tau, q)| (tau, q))
            .ok_or_else(|| CfxError::Config("no usable sepsis trajectory found".into()))
    }

    /// Fraction of posterior draws on which the `do` branch visits a
    /// clinician-turn state with disagreement (where trust changes what the
    /// clinician does).
    pub fn channel_rate(&self, query: &EffectQuery, draws: u64, seed: u64) -> Result<f64> {
        let branches = vec![crate::effects::branch_do(&self.model, query)?];
        let mut hits = 0u64;
        for d in 0..draws {
            let out = crate::inference::counterfactual_sample(
                &self.model,
                &query.tau,
                &branches,
                seed ^ 0x0C0FFEE,
                d,
            )?;
            let tr = &out["do"];
            for t in 0..=self.model.horizon() {
                let i = self.model.index_of(VarId::state(t))?;
                if let SepsisState::Active {
                    patient,
                    phase: Phase::ClTurn { rec },
                } = self.state(tr.cat(i))
                {
                    if self.config.q(*patient, *rec) > 0.0 {
                        hits += 1;
                        break;
                    }
                }
            }
        }
        Ok(hits as f64 / draws as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects;

    fn small_env(trust: f64) -> SepsisEnv {
        build_sepsis(SepsisConfig::compact(trust, 3)).unwrap()
    }

    #[test]
    fn preset_compiles_and_is_consistent() {
        let env = small_env(0.5);
        assert_eq!(env.model.n_agents(), 2);
        assert_eq!(env.model.horizon(), 6);
        assert!(env.model.check_noise_monotonicity(16).passed());
    }

    #[test]
    fn full_trust_means_no_overrides_anywhere() {
        let env = small_env(1.0);
        for s in &env.states {
            if let SepsisState::Active {
                patient,
                phase: Phase::ClTurn { rec },
            } = s
            {
                assert_eq!(env.config.override_prob(*patient, *rec), 0.0);
            }
        }
        // And the clinician policy is the identity on the recommendation:
        // the applied treatment equals the recommendation on every rollout.
        for seed in 0..20 {
            let (_, tau) = env.model.sample_prior(seed).unwrap();
            for t in (1..env.model.horizon()).step_by(2) {
                let aidx = env.model.index_of(VarId::action(CLINICIAN, t)).unwrap();
                assert_eq!(tau.cat(aidx), DEFER);
            }
        }
    }

    #[test]
    fn override_probability_is_nonincreasing_in_trust() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let envs: Vec<SepsisEnv> = grid.iter().map(|&mu| small_env(mu)).collect();
        for s in &envs[0].states {
            if let SepsisState::Active {
                patient,
                phase: Phase::ClTurn { rec },
            } = s
            {
                let probs: Vec<f64> = envs
                    .iter()
                    .map(|e| e.config.override_prob(*patient, *rec))
                    .collect();
                for w in probs.windows(2) {
                    assert!(w[0] >= w[1] - 1e-15);
                }
                assert_eq!(*probs.last().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn preset_query_is_a_failed_trajectory_with_positive_effect() {
        let env = small_env(1.0);
        let (tau, query) = env.find_preset_query(AI, 11, 400, 0.3, 1).unwrap();
        assert!(matches!(env.final_state(&tau).unwrap(), SepsisState::Dead));
        assert!(env.trust_invariant(&tau).unwrap());
        let est = effects::tcfe(&env.model, &query, 100, 5).unwrap();
        // Success probabilities live in [0, 1]; a failed factual gives a
        // nonnegative effect bounded by one.
        assert!(est.mean >= 0.0 && est.mean <= 1.0, "tcfe {}", est.mean);
        assert!(est.mean > 0.05, "tcfe too small to demonstrate anything");
    }

    #[test]
    fn trust_sweep_shares_the_same_factual_trajectory() {
        // The factual trajectory found on the full-trust model abducts
        // cleanly under every trust level.
        let reference = small_env(1.0);
        let (tau, _) = reference.find_preset_query(AI, 11, 400, 0.3, 1).unwrap();
        for mu in [0.0, 0.25, 0.5, 0.75] {
            let env = small_env(mu);
            assert!(crate::inference::abduct(&env.model, &tau).is_ok(), "mu={mu}");
        }
    }
}
