//! Gridworld trajectory fixtures: parsing, auditing and conversion to model
//! trajectories.
//!
//! Fixture grammar (one record per step, blank lines ignored):
//!
//! ```text
//! Box 1: (PINK, YELLOW); Box 2: (PINK, GREEN)
//! Step: 0; Reporter: <free text>;
//! Planner: (<instruction>, <instruction>); Reward: 0.0;
//! Step: 1; Actors (A1, A2): <move>, <move>; Reward: R (A1: R1, A2: R2);
//! Step: N; Goal Reward: G; Total Reward: T;
//! ```
//!
//! Rewards are exact decimals with at most one fractional digit, stored in
//! tenths. The audit checks every actor line's component sum and the final
//! total; a mismatch is an error naming the step.

use std::fmt::Write as _;

use crate::error::{CfxError, Result};
use crate::scm::{Trajectory, VarId};

use super::gridworld::{planner_action_from_label, planner_action_label, GridworldEnv, Move};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepRecord {
    Actor {
        step: usize,
        moves: (String, String),
        reward_deci: i64,
        components_deci: (i64, i64),
    },
    Planner {
        step: usize,
        reporter: String,
        instructions: (String, String),
        reward_deci: i64,
    },
}

impl StepRecord {
    pub fn step(&self) -> usize {
        match self {
            StepRecord::Actor { step, .. } | StepRecord::Planner { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFixture {
    pub boxes: (Vec<String>, Vec<String>),
    pub steps: Vec<StepRecord>,
    pub goal_step: usize,
    pub goal_deci: i64,
    pub total_deci: i64,
}

/// Parse a decimal with at most one fractional digit into tenths.
pub fn parse_deci(s: &str) -> Result<i64> {
    let s = s.trim();
    let bad = || CfxError::Parse(format!("bad decimal '{s}'"));
    let (sign, rest) = match s.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1, s),
    };
    let (int, frac) = match rest.split_once('.') {
        Some((i, f)) => (i, f),
        None => (rest, "0"),
    };
    if frac.len() != 1 {
        return Err(bad());
    }
    let int: i64 = int.parse().map_err(|_| bad())?;
    let frac: i64 = frac.parse().map_err(|_| bad())?;
    Ok(sign * (int * 10 + frac))
}

pub fn format_deci(deci: i64) -> String {
    let sign = if deci < 0 { "-" } else { "" };
    let abs = deci.abs();
    format!("{sign}{}.{}", abs / 10, abs % 10)
}

fn strip_semi(s: &str) -> &str {
    s.trim().trim_end_matches(';').trim()
}

fn field<'a>(line: &'a str, key: &str, step: usize) -> Result<&'a str> {
    line.split(';')
        .map(str::trim)
        .find_map(|part| part.strip_prefix(key))
        .map(str::trim)
        .ok_or_else(|| CfxError::Parse(format!("step {step}: missing '{key}'")))
}

/// Parse "(x, y)" into its two components.
fn parse_pair(s: &str) -> Result<(String, String)> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .ok_or_else(|| CfxError::Parse(format!("expected parenthesized pair, got '{s}'")))?;
    let (a, b) = inner
        .split_once(',')
        .ok_or_else(|| CfxError::Parse(format!("expected two components in '{s}'")))?;
    Ok((a.trim().to_string(), b.trim().to_string()))
}

pub fn parse_fixture(text: &str) -> Result<ParsedFixture> {
    let mut boxes = None;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut goal: Option<(usize, i64, i64)> = None;
    let mut pending_reporter: Option<(usize, String)> = None;

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Box 1:") {
            let (b1, b2) = rest
                .split_once("Box 2:")
                .ok_or_else(|| CfxError::Parse("header missing Box 2".into()))?;
            let parse_box = |s: &str| -> Result<Vec<String>> {
                let (a, b) = parse_pair(strip_semi(s))?;
                Ok(vec![a, b])
            };
            boxes = Some((parse_box(b1)?, parse_box(b2)?));
            continue;
        }
        if let Some(rest) = line.strip_prefix("Planner:") {
            let (step, reporter) = pending_reporter.take().ok_or_else(|| {
                CfxError::Parse("planner line without a preceding reporter step".into())
            })?;
            let (instr_part, reward_part) = rest
                .split_once("; Reward:")
                .ok_or_else(|| CfxError::Parse(format!("step {step}: planner line lacks reward")))?;
            let instructions = parse_pair(strip_semi(instr_part))?;
            let reward_deci = parse_deci(strip_semi(reward_part))?;
            steps.push(StepRecord::Planner {
                step,
                reporter,
                instructions,
                reward_deci,
            });
            continue;
        }
        if let Some(rest) = line.strip_prefix("Step:") {
            let (num, rest) = rest
                .trim()
                .split_once(';')
                .ok_or_else(|| CfxError::Parse(format!("malformed step line '{line}'")))?;
            let step: usize = num
                .trim()
                .parse()
                .map_err(|_| CfxError::Parse(format!("bad step number '{num}'")))?;
            let rest = rest.trim();
            if let Some(actors) = rest.strip_prefix("Actors (A1, A2):") {
                let (moves_part, reward_part) = actors
                    .split_once("; Reward:")
                    .ok_or_else(|| CfxError::Parse(format!("step {step}: missing reward")))?;
                let (m1, m2) = {
                    let (a, b) = moves_part.trim().split_once(',').ok_or_else(|| {
                        CfxError::Parse(format!("step {step}: expected two moves"))
                    })?;
                    (a.trim().to_string(), b.trim().to_string())
                };
                // "R (A1: R1, A2: R2);"
                let reward_part = strip_semi(reward_part);
                let (r, comp) = reward_part.split_once('(').ok_or_else(|| {
                    CfxError::Parse(format!("step {step}: missing reward components"))
                })?;
                let comp = comp.trim_end_matches(')');
                let (c1, c2) = comp
                    .split_once(',')
                    .ok_or_else(|| CfxError::Parse(format!("step {step}: bad components")))?;
                let r1 = parse_deci(c1.trim().strip_prefix("A1:").ok_or_else(|| {
                    CfxError::Parse(format!("step {step}: missing A1 component"))
                })?)?;
                let r2 = parse_deci(c2.trim().strip_prefix("A2:").ok_or_else(|| {
                    CfxError::Parse(format!("step {step}: missing A2 component"))
                })?)?;
                steps.push(StepRecord::Actor {
                    step,
                    moves: (m1, m2),
                    reward_deci: parse_deci(r.trim())?,
                    components_deci: (r1, r2),
                });
            } else if rest.starts_with("Reporter:") {
                pending_reporter = Some((step, strip_semi(rest).to_string()));
            } else if rest.starts_with("Goal Reward:") {
                let g = parse_deci(strip_semi(field(rest, "Goal Reward:", step)?))?;
                let t = parse_deci(strip_semi(field(rest, "Total Reward:", step)?))?;
                goal = Some((step, g, t));
            } else {
                return Err(CfxError::Parse(format!("step {step}: unrecognized record")));
            }
            continue;
        }
        return Err(CfxError::Parse(format!("unrecognized line '{line}'")));
    }

    let boxes = boxes.ok_or_else(|| CfxError::Parse("missing box header".into()))?;
    let (goal_step, goal_deci, total_deci) =
        goal.ok_or_else(|| CfxError::Parse("missing goal line".into()))?;
    Ok(ParsedFixture {
        boxes,
        steps,
        goal_step,
        goal_deci,
        total_deci,
    })
}

/// Per-step audit report.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub steps_checked: usize,
    pub total_deci: i64,
}

/// Verify every actor line's component sum and the grand total, exactly in
/// tenths.
pub fn audit(fixture: &ParsedFixture) -> Result<AuditReport> {
    let mut running = 0i64;
    let mut checked = 0;
    for record in &fixture.steps {
        match record {
            StepRecord::Actor {
                step,
                reward_deci,
                components_deci: (r1, r2),
                ..
            } => {
                if r1 + r2 != *reward_deci {
                    return Err(CfxError::Audit {
                        step: *step,
                        reason: format!(
                            "components {} + {} != reward {}",
                            format_deci(*r1),
                            format_deci(*r2),
                            format_deci(*reward_deci)
                        ),
                    });
                }
                running += reward_deci;
                checked += 1;
            }
            StepRecord::Planner {
                step, reward_deci, ..
            } => {
                running += reward_deci;
                if *reward_deci != 0 {
                    return Err(CfxError::Audit {
                        step: *step,
                        reason: "planner step carries a nonzero reward".into(),
                    });
                }
                checked += 1;
            }
        }
    }
    let total = running + fixture.goal_deci;
    if total != fixture.total_deci {
        return Err(CfxError::Audit {
            step: fixture.goal_step,
            reason: format!(
                "step rewards {} + goal {} = {} but total says {}",
                format_deci(running),
                format_deci(fixture.goal_deci),
                format_deci(total),
                format_deci(fixture.total_deci)
            ),
        });
    }
    Ok(AuditReport {
        steps_checked: checked,
        total_deci: total,
    })
}

/// Canonical serialization; `parse_fixture(serialize(f)) == f`.
pub fn serialize_fixture(fixture: &ParsedFixture) -> String {
    let mut out = String::new();
    let fmt_box = |b: &[String]| format!("({}, {})", b[0], b[1]);
    let _ = writeln!(
        out,
        "Box 1: {}; Box 2: {}",
        fmt_box(&fixture.boxes.0),
        fmt_box(&fixture.boxes.1)
    );
    let _ = writeln!(out);
    for record in &fixture.steps {
        match record {
            StepRecord::Planner {
                step,
                reporter,
                instructions,
                reward_deci,
            } => {
                let _ = writeln!(out, "Step: {step}; {reporter};");
                let _ = writeln!(
                    out,
                    "Planner: ({}, {}); Reward: {};",
                    instructions.0,
                    instructions.1,
                    format_deci(*reward_deci)
                );
            }
            StepRecord::Actor {
                step,
                moves,
                reward_deci,
                components_deci,
            } => {
                let _ = writeln!(
                    out,
                    "Step: {step}; Actors (A1, A2): {}, {}; Reward: {} (A1: {}, A2: {});",
                    moves.0,
                    moves.1,
                    format_deci(*reward_deci),
                    format_deci(components_deci.0),
                    format_deci(components_deci.1)
                );
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Step: {}; Goal Reward: {}; Total Reward: {};",
        fixture.goal_step,
        format_deci(fixture.goal_deci),
        format_deci(fixture.total_deci)
    );
    out
}

/// Materialize the fixture as a model trajectory: replay the scripted
/// actions and select, at every step, the successor state whose realized
/// reward components match the printed ones. Steps beyond the last printed
/// line follow the (deterministic) policies.
pub fn to_model_trajectory(env: &GridworldEnv, fixture: &ParsedFixture) -> Result<Trajectory> {
    audit(fixture)?;
    let model = &env.model;
    let h = model.horizon();
    let null_move = Move::Null.label();
    let null_planner = planner_action_label((
        super::gridworld::Instr::None,
        super::gridworld::Instr::None,
    ));

    // Per-timestep action labels and expected reward components.
    let mut moves: Vec<(String, String)> = vec![(null_move.clone(), null_move.clone()); h];
    let mut planner: Vec<String> = vec![null_planner; h];
    let mut expect: Vec<Option<(i64, i64)>> = vec![None; h];
    for record in &fixture.steps {
        let t = record.step();
        if t >= h {
            return Err(CfxError::Parse(format!(
                "step {t} outside horizon {h}"
            )));
        }
        match record {
            StepRecord::Actor {
                moves: (m1, m2),
                components_deci,
                ..
            } => {
                moves[t] = (m1.clone(), m2.clone());
                expect[t] = Some(*components_deci);
            }
            StepRecord::Planner { instructions, .. } => {
                planner[t] = format!("{}|{}", instructions.0, instructions.1);
                expect[t] = Some((0, 0));
            }
        }
    }

    let mut values = Vec::with_capacity(model.n_vars());
    // Initial state: unique support of the initial distribution.
    let s0_row = model
        .cpd_of(VarId::state(0))?
        .row(&[] as &[u32])
        .ok_or_else(|| CfxError::Inconsistent("no initial row".into()))?;
    if s0_row.support().len() != 1 {
        return Err(CfxError::Inconsistent("initial state is not unique".into()));
    }
    let mut current = s0_row.support()[0].0;
    values.push(current);

    for t in 0..h {
        let mut action_cats = Vec::with_capacity(3);
        for agent in 1..=3 {
            let idx = model.index_of(VarId::action(agent, t))?;
            let label = match agent {
                1 => moves[t].0.clone(),
                2 => moves[t].1.clone(),
                _ => {
                    // Normalize through the instruction parser so fixture
                    // spellings map onto canonical planner labels.
                    planner_action_label(planner_action_from_label(&planner[t])?)
                }
            };
            let cat = model.cpd(idx).index_of_label(&label).ok_or_else(|| {
                CfxError::Parse(format!("step {t}: unknown action '{label}'"))
            })?;
            action_cats.push(cat);
            values.push(cat);
        }
        let sidx = model.index_of(VarId::state(t + 1))?;
        let mut key = vec![current];
        key.extend_from_slice(&action_cats);
        let row = model.cpd(sidx).row(&key).ok_or_else(|| {
            CfxError::Audit {
                step: t,
                reason: "state/action pair not materialized in the model".into(),
            }
        })?;
        let matches: Vec<u32> = row
            .support()
            .iter()
            .map(|&(cat, _)| cat)
            .filter(|&cat| {
                let s = env.state(cat);
                match expect[t] {
                    Some((r1, r2)) => s.r1 == r1 && s.r2 == r2,
                    None => s.r1 == 0 && s.r2 == 0,
                }
            })
            .collect();
        match matches.as_slice() {
            [one] => {
                current = *one;
                values.push(current);
            }
            [] => {
                return Err(CfxError::Audit {
                    step: t,
                    reason: format!(
                        "no successor matches reward components {:?}",
                        expect[t]
                    ),
                })
            }
            _ => {
                return Err(CfxError::Audit {
                    step: t,
                    reason: "ambiguous successor for printed rewards".into(),
                })
            }
        }
    }
    Ok(Trajectory(values))
}
