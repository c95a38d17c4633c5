//! Planner/actor delivery gridworld.
//!
//! Two actors pick objects out of boxes and carry them to color-matched
//! delivery cells, instructed by a planner agent that reads box contents
//! and carried colors out of the state. Planner and actors are scripted
//! deterministic policies (the planner examines, then orders pickup of the
//! most valuable objects, then orders matching deliveries; actors follow
//! fixed shortest routes). The only stochastic variables are the colored
//! penalty cells, so every counterfactual quantity in this environment is
//! driven by the penalty draws.
//!
//! Geometry, reward tables and routes are configuration, loaded from a
//! layout document; [`GridworldConfig::paper_preset`] ships the layout the
//! replay fixtures were recorded on. Rewards are tracked in tenths
//! (deci-units) so replay totals are exact decimals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::effects::{EffectQuery, ResponseSpec};
use crate::error::{CfxError, Result};
use crate::mmdp::{compile, consistency_check, DeviationSet, MmdpSpec, OrderingSpec, PolicySet};
use crate::model_io::ProbValue;
use crate::scm::{ScmModel, Trajectory};

use super::{assemble, Dynamics};

pub const PRESET_LAYOUT: &str = include_str!("../../assets/gridworld_layout.json");
pub const FIXTURE_FACTUAL: &str = include_str!("../../assets/trajectory_factual.txt");
pub const FIXTURE_CF_PICKUP: &str = include_str!("../../assets/trajectory_cf_pickup.txt");
pub const FIXTURE_CF_PLANNER: &str = include_str!("../../assets/trajectory_cf_planner.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Pink,
    Green,
    Yellow,
}

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Pink => "pink",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    /// Object value order: pink > green > yellow.
    fn rank(self) -> u8 {
        match self {
            Color::Pink => 0,
            Color::Green => 1,
            Color::Yellow => 2,
        }
    }

    fn short(self) -> char {
        match self {
            Color::Pink => 'P',
            Color::Green => 'G',
            Color::Yellow => 'Y',
        }
    }
}

pub type Pos = (u8, u8);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyDist {
    pub values_deci: Vec<i64>,
    pub probs: Vec<ProbValue>,
}

impl PenaltyDist {
    fn parsed(&self) -> Result<Vec<(i64, f64)>> {
        if self.values_deci.len() != self.probs.len() {
            return Err(CfxError::Config("penalty values/probs length mismatch".into()));
        }
        self.values_deci
            .iter()
            .zip(&self.probs)
            .map(|(&v, p)| Ok((v, p.to_f64()?)))
            .collect()
    }

    fn mean_deci(&self) -> Result<f64> {
        Ok(self
            .parsed()?
            .iter()
            .map(|&(v, p)| v as f64 * p)
            .sum())
    }

    fn variance(&self) -> Result<f64> {
        let rows = self.parsed()?;
        let mean: f64 = rows.iter().map(|&(v, p)| v as f64 / 10.0 * p).sum();
        Ok(rows
            .iter()
            .map(|&(v, p)| {
                let d = v as f64 / 10.0 - mean;
                p * d * d
            })
            .sum())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyCell {
    pub pos: Pos,
    pub color: Color,
    pub full: PenaltyDist,
    pub reduced: PenaltyDist,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorSetup {
    pub spawn: Pos,
    pub box_pos: Pos,
    pub examine_spot: Pos,
    pub box_contents: Vec<Color>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeliveryCell {
    pub pos: Pos,
    pub color: Color,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridworldConfig {
    pub rows: u8,
    pub cols: u8,
    pub horizon: usize,
    pub step_cost_deci: i64,
    pub walls: Vec<Pos>,
    pub actors: Vec<ActorSetup>,
    pub deliveries: Vec<DeliveryCell>,
    pub delivery_rewards_deci: BTreeMap<Color, i64>,
    pub penalties: Vec<PenaltyCell>,
    /// Routes keyed "a1:pink", "a2:green", ...: waypoint lists an actor
    /// follows for a goto instruction.
    pub routes: BTreeMap<String, Vec<Pos>>,
}

impl GridworldConfig {
    pub fn paper_preset() -> GridworldConfig {
        serde_json::from_str(PRESET_LAYOUT).expect("embedded layout parses")
    }

    pub fn from_json(text: &str) -> Result<GridworldConfig> {
        serde_json::from_str(text).map_err(|e| CfxError::Parse(e.to_string()))
    }

    fn is_wall(&self, pos: Pos) -> bool {
        self.walls.contains(&pos)
    }

    fn in_bounds(&self, pos: (i16, i16)) -> bool {
        pos.0 >= 0 && pos.1 >= 0 && (pos.0 as u8) < self.rows && (pos.1 as u8) < self.cols
    }

    fn penalty_at(&self, pos: Pos) -> Option<&PenaltyCell> {
        self.penalties.iter().find(|p| p.pos == pos)
    }

    fn delivery_at(&self, pos: Pos) -> Option<&DeliveryCell> {
        self.deliveries.iter().find(|d| d.pos == pos)
    }

    fn route(&self, actor: usize, color: Color) -> Option<&Vec<Pos>> {
        self.routes.get(&format!("a{actor}:{}", color.name()))
    }

    /// Shortest path length between two cells,走 through open cells.
    fn bfs_distance(&self, from: Pos, to: Pos) -> Option<usize> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        queue.push_back((from, 0usize));
        seen.insert(from);
        while let Some((pos, d)) = queue.pop_front() {
            if pos == to {
                return Some(d);
            }
            for (dr, dc) in [(-1i16, 0i16), (1, 0), (0, -1), (0, 1)] {
                let next = (pos.0 as i16 + dr, pos.1 as i16 + dc);
                if !self.in_bounds(next) {
                    continue;
                }
                let next = (next.0 as u8, next.1 as u8);
                if self.is_wall(next) || !seen.insert(next) {
                    continue;
                }
                queue.push_back((next, d + 1));
            }
        }
        None
    }

    /// Structural validation: distributions are valid and color means
    /// match, routes are legal shortest paths ending on matching
    /// deliveries, actor spots are adjacent to spawns.
    pub fn validate(&self) -> Result<()> {
        if self.actors.len() != 2 {
            return Err(CfxError::Config("layout needs exactly two actors".into()));
        }
        let mut color_means: BTreeMap<Color, (f64, f64)> = BTreeMap::new();
        for cell in &self.penalties {
            if self.is_wall(cell.pos) {
                return Err(CfxError::Config(format!("penalty on wall {:?}", cell.pos)));
            }
            for dist in [&cell.full, &cell.reduced] {
                let total: f64 = dist
                    .parsed()?
                    .iter()
                    .map(|&(_, p)| p)
                    .sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(CfxError::Config(format!(
                        "penalty at {:?} probabilities sum to {total}",
                        cell.pos
                    )));
                }
            }
            let means = (cell.full.mean_deci()?, cell.reduced.mean_deci()?);
            match color_means.get(&cell.color) {
                None => {
                    color_means.insert(cell.color, means);
                }
                Some(&(f, r)) => {
                    // Cells of one color share the same means even when the
                    // underlying distributions differ.
                    if (f - means.0).abs() > 1e-9 || (r - means.1).abs() > 1e-9 {
                        return Err(CfxError::Config(format!(
                            "penalty means of color {} differ across cells",
                            cell.color.name()
                        )));
                    }
                }
            }
        }
        for (key, route) in &self.routes {
            let (actor, color) = parse_route_key(key)?;
            if route.len() < 2 {
                return Err(CfxError::Config(format!("route {key} too short")));
            }
            let mut unique = route.clone();
            unique.sort();
            unique.dedup();
            if unique.len() != route.len() {
                return Err(CfxError::Config(format!("route {key} revisits a cell")));
            }
            for w in route.windows(2) {
                let dr = (w[1].0 as i16 - w[0].0 as i16).abs();
                let dc = (w[1].1 as i16 - w[0].1 as i16).abs();
                if dr + dc != 1 {
                    return Err(CfxError::Config(format!("route {key} has a non-unit step")));
                }
            }
            for &pos in route {
                if self.is_wall(pos) || !self.in_bounds((pos.0 as i16, pos.1 as i16)) {
                    return Err(CfxError::Config(format!(
                        "route {key} crosses wall or boundary at {pos:?}"
                    )));
                }
            }
            let start = route[0];
            let end = *route.last().unwrap();
            match self.delivery_at(end) {
                Some(d) if d.color == color => {}
                _ => {
                    return Err(CfxError::Config(format!(
                        "route {key} does not end on a {} delivery",
                        color.name()
                    )));
                }
            }
            let shortest = self.bfs_distance(start, end).ok_or_else(|| {
                CfxError::Config(format!("route {key} endpoints are disconnected"))
            })?;
            if route.len() - 1 != shortest {
                return Err(CfxError::Config(format!(
                    "route {key} has {} moves but the shortest path has {shortest}",
                    route.len() - 1
                )));
            }
            if self.actors.get(actor - 1).is_none() {
                return Err(CfxError::Config(format!("route {key} for unknown actor")));
            }
        }
        for (i, a) in self.actors.iter().enumerate() {
            let dr = (a.spawn.0 as i16 - a.examine_spot.0 as i16).abs();
            let dc = (a.spawn.1 as i16 - a.examine_spot.1 as i16).abs();
            if dr + dc != 1 {
                return Err(CfxError::Config(format!(
                    "actor {} spawn is not adjacent to its examine spot",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

fn parse_route_key(key: &str) -> Result<(usize, Color)> {
    let bad = || CfxError::Config(format!("bad route key '{key}'"));
    let (actor, color) = key.split_once(':').ok_or_else(bad)?;
    let actor: usize = actor.strip_prefix('a').ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let color = match color {
        "pink" => Color::Pink,
        "green" => Color::Green,
        "yellow" => Color::Yellow,
        _ => return Err(bad()),
    };
    Ok((actor, color))
}

/// Actor movement and pickup actions, in a fixed index order shared by both
/// actors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Null,
    Up,
    Down,
    Left,
    Right,
    Pickup(Color),
}

const MOVES: [Move; 8] = [
    Move::Null,
    Move::Up,
    Move::Down,
    Move::Left,
    Move::Right,
    Move::Pickup(Color::Pink),
    Move::Pickup(Color::Green),
    Move::Pickup(Color::Yellow),
];

impl Move {
    pub fn label(self) -> String {
        match self {
            Move::Null => "NULL".into(),
            Move::Up => "up".into(),
            Move::Down => "down".into(),
            Move::Left => "left".into(),
            Move::Right => "right".into(),
            Move::Pickup(c) => format!("pickup {}", c.name()),
        }
    }

    pub fn from_label(label: &str) -> Result<Move> {
        MOVES
            .iter()
            .copied()
            .find(|m| m.label() == label)
            .ok_or_else(|| CfxError::Parse(format!("unknown actor action '{label}'")))
    }

    fn index(self) -> u32 {
        MOVES.iter().position(|&m| m == self).unwrap() as u32
    }

    fn delta(self) -> Option<(i16, i16)> {
        match self {
            Move::Up => Some((-1, 0)),
            Move::Down => Some((1, 0)),
            Move::Left => Some((0, -1)),
            Move::Right => Some((0, 1)),
            _ => None,
        }
    }
}

/// One per-actor instruction, as issued by the planner and stored in the
/// state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Instr {
    None,
    Examine,
    Pickup(Color),
    Goto(Color),
}

impl Instr {
    fn label(self, actor: usize) -> String {
        match self {
            Instr::None => "-".into(),
            Instr::Examine => format!("examine box {actor}"),
            Instr::Pickup(c) => format!("pickup {}", c.name()),
            Instr::Goto(c) => format!("goto {}", c.name()),
        }
    }

    fn from_label(label: &str) -> Result<Instr> {
        let label = label.trim();
        if label == "-" {
            return Ok(Instr::None);
        }
        if label.starts_with("examine box") {
            return Ok(Instr::Examine);
        }
        let color = |s: &str| -> Result<Color> {
            match s {
                "pink" => Ok(Color::Pink),
                "green" => Ok(Color::Green),
                "yellow" => Ok(Color::Yellow),
                _ => Err(CfxError::Parse(format!("unknown color '{s}'"))),
            }
        };
        if let Some(rest) = label.strip_prefix("pickup ") {
            return Ok(Instr::Pickup(color(rest)?));
        }
        if let Some(rest) = label.strip_prefix("goto ") {
            return Ok(Instr::Goto(color(rest)?));
        }
        Err(CfxError::Parse(format!("unknown instruction '{label}'")))
    }
}

/// The planner's joint instruction for both actors.
pub type PlannerAction = (Instr, Instr);

/// Instruction pairs the planner can issue in this environment. The paper
/// instruction set is larger; this is the subset the scripted plan and the
/// supported interventions use.
const PLANNER_ACTIONS: [PlannerAction; 6] = [
    (Instr::None, Instr::None),
    (Instr::Examine, Instr::Examine),
    (Instr::Pickup(Color::Pink), Instr::Pickup(Color::Pink)),
    (Instr::Pickup(Color::Pink), Instr::Pickup(Color::Green)),
    (Instr::Goto(Color::Pink), Instr::Goto(Color::Pink)),
    (Instr::Goto(Color::Pink), Instr::Goto(Color::Green)),
];

pub fn planner_action_label(action: PlannerAction) -> String {
    if action == (Instr::None, Instr::None) {
        "none".into()
    } else {
        format!("{}|{}", action.0.label(1), action.1.label(2))
    }
}

pub fn planner_action_from_label(label: &str) -> Result<PlannerAction> {
    if label == "none" {
        return Ok((Instr::None, Instr::None));
    }
    let (a, b) = label
        .split_once('|')
        .ok_or_else(|| CfxError::Parse(format!("bad planner action '{label}'")))?;
    Ok((Instr::from_label(a)?, Instr::from_label(b)?))
}

/// One actor's situation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ActorState {
    pub pos: Pos,
    pub carry: Option<Color>,
    pub done: bool,
}

/// Full environment state. Field order matters: the derived lexicographic
/// `Ord` sorts by (r1, r2) first, which becomes the noise-monotonicity
/// ordering of the compiled state domain. Within any one conditional row
/// only the reward components vary, so the inverse CDF sweeps the first
/// actor's penalty outermost and the second actor's within it; shared noise
/// then reproduces the first actor's draw identically across branches
/// whenever its own situation is unchanged.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridState {
    /// Step reward components (cost + penalty) in tenths, per actor.
    pub r1: i64,
    pub r2: i64,
    /// Delivery payouts realized this step, in tenths.
    pub goal1: i64,
    pub goal2: i64,
    pub a1: ActorState,
    pub a2: ActorState,
    pub instr1: Instr,
    pub instr2: Instr,
}

impl GridState {
    pub fn reward_deci(&self) -> i64 {
        self.r1 + self.r2 + self.goal1 + self.goal2
    }

    fn actor(&self, i: usize) -> &ActorState {
        if i == 1 {
            &self.a1
        } else {
            &self.a2
        }
    }

    fn instr(&self, i: usize) -> Instr {
        if i == 1 {
            self.instr1
        } else {
            self.instr2
        }
    }
}

struct GridDynamics<'c> {
    config: &'c GridworldConfig,
}

impl GridDynamics<'_> {
    fn initial_state(&self) -> GridState {
        GridState {
            r1: 0,
            r2: 0,
            goal1: 0,
            goal2: 0,
            a1: ActorState {
                pos: self.config.actors[0].spawn,
                carry: None,
                done: false,
            },
            a2: ActorState {
                pos: self.config.actors[1].spawn,
                carry: None,
                done: false,
            },
            instr1: Instr::None,
            instr2: Instr::None,
        }
    }

    fn revealed(&self, s: &GridState, i: usize) -> bool {
        let a = s.actor(i);
        a.pos == self.config.actors[i - 1].examine_spot || a.carry.is_some() || a.done
    }

    fn best_in_box(&self, i: usize) -> Color {
        *self.config.actors[i - 1]
            .box_contents
            .iter()
            .min_by_key(|c| c.rank())
            .expect("boxes are non-empty")
    }

    fn actor_policy(&self, s: &GridState, i: usize) -> Move {
        let setup = &self.config.actors[i - 1];
        let a = s.actor(i);
        if a.done {
            return Move::Null;
        }
        match s.instr(i) {
            Instr::None => Move::Null,
            Instr::Examine => {
                if a.pos == setup.examine_spot {
                    Move::Null
                } else {
                    step_towards(a.pos, setup.examine_spot)
                }
            }
            Instr::Pickup(c) => {
                if a.carry.is_none() && a.pos == setup.examine_spot {
                    Move::Pickup(c)
                } else {
                    Move::Null
                }
            }
            Instr::Goto(c) => match self.config.route(i, c) {
                Some(route) => match route.iter().position(|&p| p == a.pos) {
                    Some(k) if k + 1 < route.len() => step_towards(a.pos, route[k + 1]),
                    _ => Move::Null,
                },
                None => Move::Null,
            },
        }
    }

    fn planner_policy(&self, s: &GridState) -> PlannerAction {
        if s.instr1 == Instr::None && s.instr2 == Instr::None && !(s.a1.done && s.a2.done) {
            return (Instr::Examine, Instr::Examine);
        }
        if self.revealed(s, 1)
            && self.revealed(s, 2)
            && s.instr1 == Instr::Examine
            && s.instr2 == Instr::Examine
        {
            return (
                Instr::Pickup(self.best_in_box(1)),
                Instr::Pickup(self.best_in_box(2)),
            );
        }
        if let (Some(c1), Some(c2)) = (s.a1.carry, s.a2.carry) {
            if matches!(s.instr1, Instr::Pickup(_)) || matches!(s.instr2, Instr::Pickup(_)) {
                return (Instr::Goto(c1), Instr::Goto(c2));
            }
        }
        (Instr::None, Instr::None)
    }

    /// Apply one actor's move; returns (new actor state, penalty
    /// distribution entered, delivery payout).
    fn apply_move(&self, a: &ActorState, mv: Move, setup: &ActorSetup) -> (ActorState, Option<Vec<(i64, f64)>>, i64) {
        let mut out = *a;
        let mut penalty = None;
        let mut payout = 0;
        match mv {
            Move::Null => {}
            Move::Pickup(c) => {
                if a.pos == setup.examine_spot && a.carry.is_none() && setup.box_contents.contains(&c)
                {
                    out.carry = Some(c);
                }
            }
            _ => {
                if let Some(delta) = mv.delta() {
                    let next = (a.pos.0 as i16 + delta.0, a.pos.1 as i16 + delta.1);
                    if self.config.in_bounds(next) {
                        let next = (next.0 as u8, next.1 as u8);
                        if !self.config.is_wall(next) {
                            out.pos = next;
                        }
                    }
                }
                if out.pos != a.pos {
                    if let Some(cell) = self.config.penalty_at(out.pos) {
                        let dist = if a.carry == Some(cell.color) {
                            &cell.reduced
                        } else {
                            &cell.full
                        };
                        penalty = Some(dist.parsed().expect("validated distributions"));
                    }
                    if let Some(d) = self.config.delivery_at(out.pos) {
                        if a.carry == Some(d.color) {
                            payout = self.config.delivery_rewards_deci[&d.color];
                            out.carry = None;
                            out.done = true;
                        }
                    }
                }
            }
        }
        (out, penalty, payout)
    }
}

fn step_towards(from: Pos, to: Pos) -> Move {
    match (to.0 as i16 - from.0 as i16, to.1 as i16 - from.1 as i16) {
        (-1, 0) => Move::Up,
        (1, 0) => Move::Down,
        (0, -1) => Move::Left,
        (0, 1) => Move::Right,
        _ => Move::Null,
    }
}

impl Dynamics for GridDynamics<'_> {
    type State = GridState;

    fn n_agents(&self) -> usize {
        3 // actor 1, actor 2, planner
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn action_labels(&self, agent: usize) -> Vec<String> {
        if agent <= 2 {
            MOVES.iter().map(|m| m.label()).collect()
        } else {
            PLANNER_ACTIONS.iter().map(|&a| planner_action_label(a)).collect()
        }
    }

    fn label(&self, s: &GridState) -> String {
        let actor = |a: &ActorState| {
            format!(
                "{},{}{}{}",
                a.pos.0,
                a.pos.1,
                a.carry.map_or('-', |c| c.short()),
                if a.done { '*' } else { '.' }
            )
        };
        let instr = |i: Instr| match i {
            Instr::None => "-".to_string(),
            Instr::Examine => "ex".to_string(),
            Instr::Pickup(c) => format!("p{}", c.short()),
            Instr::Goto(c) => format!("g{}", c.short()),
        };
        format!(
            "a1@{}|a2@{}|i:{},{}|r:{},{}|g:{},{}",
            actor(&s.a1),
            actor(&s.a2),
            instr(s.instr1),
            instr(s.instr2),
            s.r1,
            s.r2,
            s.goal1,
            s.goal2
        )
    }

    fn value_deci(&self, s: &GridState) -> i64 {
        s.reward_deci()
    }

    fn initial(&self) -> Vec<(GridState, f64)> {
        vec![(self.initial_state(), 1.0)]
    }

    fn policy(&self, agent: usize, s: &GridState) -> Vec<(u32, f64)> {
        let action = if agent <= 2 {
            self.actor_policy(s, agent).index()
        } else {
            let a = self.planner_policy(s);
            PLANNER_ACTIONS.iter().position(|&x| x == a).unwrap() as u32
        };
        vec![(action, 1.0)]
    }

    fn extras(&self, agent: usize, t: usize) -> Vec<u32> {
        // The supported interventions: the second actor's pickup choice and
        // the planner's pickup instruction.
        match (agent, t) {
            (2, 3) => vec![
                Move::Pickup(Color::Pink).index(),
                Move::Pickup(Color::Green).index(),
            ],
            (3, 2) => vec![
                PLANNER_ACTIONS
                    .iter()
                    .position(|&a| a == (Instr::Pickup(Color::Pink), Instr::Pickup(Color::Green)))
                    .unwrap() as u32,
            ],
            _ => vec![],
        }
    }

    fn step(&self, s: &GridState, joint: &[u32]) -> Vec<(GridState, f64)> {
        let m1 = MOVES[joint[0] as usize];
        let m2 = MOVES[joint[1] as usize];
        let planner = PLANNER_ACTIONS[joint[2] as usize];

        let (a1, pen1, payout1) = self.apply_move(&s.a1, m1, &self.config.actors[0]);
        let (a2, pen2, payout2) = self.apply_move(&s.a2, m2, &self.config.actors[1]);
        let acted = m1 != Move::Null || m2 != Move::Null;
        let cost = if acted { -self.config.step_cost_deci } else { 0 };

        let instr1 = if planner.0 == Instr::None { s.instr1 } else { planner.0 };
        let instr2 = if planner.1 == Instr::None { s.instr2 } else { planner.1 };

        let base = GridState {
            r1: cost,
            r2: cost,
            goal1: payout1,
            goal2: payout2,
            a1,
            a2,
            instr1,
            instr2,
        };
        let pen1 = pen1.unwrap_or_else(|| vec![(0, 1.0)]);
        let pen2 = pen2.unwrap_or_else(|| vec![(0, 1.0)]);
        let mut out = Vec::with_capacity(pen1.len() * pen2.len());
        for &(v1, p1) in &pen1 {
            for &(v2, p2) in &pen2 {
                let mut next = base.clone();
                next.r1 += v1;
                next.r2 += v2;
                out.push((next, p1 * p2));
            }
        }
        out
    }
}

/// The assembled environment: spec, policies, compiled model and the state
/// structs aligned with the model's state domain.
pub struct GridworldEnv {
    pub config: GridworldConfig,
    pub mmdp: MmdpSpec,
    pub policies: PolicySet,
    pub deviations: DeviationSet,
    pub model: ScmModel,
    pub states: Vec<GridState>,
}

/// Build the environment: validate the layout, enumerate the reachable
/// state space, compile, and verify observational consistency.
pub fn build_gridworld(config: GridworldConfig) -> Result<GridworldEnv> {
    build_gridworld_ordered(config, &OrderingSpec::none())
}

pub fn build_gridworld_ordered(
    config: GridworldConfig,
    orderings: &OrderingSpec,
) -> Result<GridworldEnv> {
    config.validate()?;
    let dynamics = GridDynamics { config: &config };
    let (mmdp, policies, deviations, states) = assemble(&dynamics)?;
    let model = compile(&mmdp, &policies, orderings, &deviations)?;
    let report = consistency_check(&model, &mmdp, &policies)?;
    if !report.passed() {
        return Err(CfxError::Inconsistent(format!(
            "compiled gridworld deviates by {}",
            report.max_deviation
        )));
    }
    Ok(GridworldEnv {
        config,
        mmdp,
        policies,
        deviations,
        model,
        states,
    })
}

impl GridworldEnv {
    /// Index of the planner agent.
    pub const PLANNER: usize = 3;

    pub fn state(&self, cat: u32) -> &GridState {
        &self.states[cat as usize]
    }

    /// Undiscounted total reward of a trajectory, in tenths.
    pub fn rollout_total_deci(&self, tau: &Trajectory) -> Result<i64> {
        let mut total = 0;
        for k in 0..=self.model.horizon() {
            let idx = self.model.index_of(crate::scm::VarId::state(k))?;
            total += self.state(tau.cat(idx)).reward_deci();
        }
        Ok(total)
    }

    /// Default response: discounted total reward over the whole episode.
    pub fn response(&self, gamma: f64) -> ResponseSpec {
        ResponseSpec::ret(gamma, 0, self.model.horizon())
    }

    /// The factual trajectory of the replay fixtures.
    pub fn factual_trajectory(&self) -> Result<Trajectory> {
        let parsed = super::replay::parse_fixture(FIXTURE_FACTUAL)?;
        super::replay::to_model_trajectory(self, &parsed)
    }

    /// Query: the second actor picks the green object instead of pink.
    pub fn pickup_query(&self, gamma: f64) -> Result<(Trajectory, EffectQuery)> {
        let tau = self.factual_trajectory()?;
        let query = EffectQuery::new_by_label(
            &self.model,
            &tau,
            2,
            3,
            "pickup green",
            self.response(gamma),
        )?;
        Ok((tau, query))
    }

    /// Query: the planner instructs the second actor to pick green.
    pub fn planner_query(&self, gamma: f64) -> Result<(Trajectory, EffectQuery)> {
        let tau = self.factual_trajectory()?;
        let query = EffectQuery::new_by_label(
            &self.model,
            &tau,
            Self::PLANNER,
            2,
            "pickup pink|pickup green",
            self.response(gamma),
        )?;
        Ok((tau, query))
    }

    /// Reduced-distribution variances of the green corridor cells, in
    /// crossing order of the counterfactual route.
    pub fn green_corridor_variances(&self) -> Result<Vec<f64>> {
        let route = self
            .config
            .route(2, Color::Green)
            .ok_or_else(|| CfxError::Config("no green route".into()))?;
        let mut out = Vec::new();
        for pos in route {
            if let Some(cell) = self.config.penalty_at(*pos) {
                if cell.color == Color::Green {
                    out.push(cell.reduced.variance()?);
                }
            }
        }
        Ok(out)
    }
}
