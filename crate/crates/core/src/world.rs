//! The grid world: a 7×7 map with objects and landmarks, a robot that moves
//! and grabs, and the predicate valuations read off a trajectory.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::Valuation;
use crate::ltl::{Predicate, PredicateKind};

pub const GRID: usize = 7;
pub const NUM_CELLS: usize = GRID * GRID;
pub const HORIZON: usize = 20;
/// Inclusion probability for entities not mentioned by the command.
pub const DISTRACTOR_PROB: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("no valuation at step {step} (trajectory has {len} steps)")]
    NoSuchStep { step: usize, len: usize },
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: u8,
    pub y: u8,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Cell {
        Cell { x: x as u8, y: y as u8 }
    }

    pub fn index(self) -> usize {
        self.y as usize * GRID + self.x as usize
    }

    pub fn from_index(i: usize) -> Cell {
        Cell::new(i % GRID, i / GRID)
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) as usize + self.y.abs_diff(other.y) as usize
    }
}

/// Something placed on the grid: an object that can be grabbed or a landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Apple,
    Orange,
    Pear,
    Flag,
    House,
    Tree,
}

impl EntityKind {
    pub const ALL: [EntityKind; 6] = [
        EntityKind::Apple,
        EntityKind::Orange,
        EntityKind::Pear,
        EntityKind::Flag,
        EntityKind::House,
        EntityKind::Tree,
    ];

    pub fn is_object(self) -> bool {
        matches!(self, EntityKind::Apple | EntityKind::Orange | EntityKind::Pear)
    }

    pub fn predicate(self) -> Predicate {
        match self {
            EntityKind::Apple => Predicate::Apple,
            EntityKind::Orange => Predicate::Orange,
            EntityKind::Pear => Predicate::Pear,
            EntityKind::Flag => Predicate::Flag,
            EntityKind::House => Predicate::House,
            EntityKind::Tree => Predicate::Tree,
        }
    }

    /// The entity a predicate talks about (`CLOSER_p` refers to `p`).
    pub fn of_predicate(p: Predicate) -> EntityKind {
        match p {
            Predicate::Apple | Predicate::CloserApple => EntityKind::Apple,
            Predicate::Orange | Predicate::CloserOrange => EntityKind::Orange,
            Predicate::Pear | Predicate::CloserPear => EntityKind::Pear,
            Predicate::Flag => EntityKind::Flag,
            Predicate::House => EntityKind::House,
            Predicate::Tree => EntityKind::Tree,
        }
    }

    pub fn name(self) -> &'static str {
        self.predicate().name()
    }

    fn glyph(self) -> char {
        match self {
            EntityKind::Apple => 'a',
            EntityKind::Orange => 'o',
            EntityKind::Pear => 'p',
            EntityKind::Flag => 'F',
            EntityKind::House => 'H',
            EntityKind::Tree => 'T',
        }
    }

    fn object_slot(self) -> Option<usize> {
        match self {
            EntityKind::Apple => Some(0),
            EntityKind::Orange => Some(1),
            EntityKind::Pear => Some(2),
            _ => None,
        }
    }
}

impl FromStr for EntityKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| WorldError::InvalidEnvironment(format!("unknown entity kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Grab,
}

impl Action {
    /// Fixed order; greedy ties resolve to the earliest action.
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Grab];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "UP",
            Action::Down => "DOWN",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
            Action::Grab => "GRAB",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| WorldError::UnknownAction(s.to_string()))
    }
}

/// A 7×7 map with at most one instance of each entity kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Environment {
    entities: [Option<Cell>; 6],
    robot_start: Cell,
}

impl Environment {
    pub fn new(entities: &[(EntityKind, Cell)], robot_start: Cell) -> Result<Environment, WorldError> {
        let mut slots = [None; 6];
        let mut occupied = [false; NUM_CELLS];
        for &(kind, cell) in entities {
            if cell.x as usize >= GRID || cell.y as usize >= GRID {
                return Err(WorldError::InvalidEnvironment(format!(
                    "{} out of bounds at ({}, {})",
                    kind.name(),
                    cell.x,
                    cell.y
                )));
            }
            let slot = &mut slots[kind as usize];
            if slot.is_some() {
                return Err(WorldError::InvalidEnvironment(format!(
                    "duplicate entity {}",
                    kind.name()
                )));
            }
            if occupied[cell.index()] {
                return Err(WorldError::InvalidEnvironment(format!(
                    "two entities share cell ({}, {})",
                    cell.x, cell.y
                )));
            }
            occupied[cell.index()] = true;
            *slot = Some(cell);
        }
        if robot_start.x as usize >= GRID || robot_start.y as usize >= GRID {
            return Err(WorldError::InvalidEnvironment("robot out of bounds".into()));
        }
        if occupied[robot_start.index()] {
            return Err(WorldError::InvalidEnvironment(
                "robot must start on an empty cell".into(),
            ));
        }
        Ok(Environment {
            entities: slots,
            robot_start,
        })
    }

    pub fn robot_start(&self) -> Cell {
        self.robot_start
    }

    pub fn location(&self, kind: EntityKind) -> Option<Cell> {
        self.entities[kind as usize]
    }

    pub fn entities(&self) -> Vec<(EntityKind, Cell)> {
        EntityKind::ALL
            .iter()
            .filter_map(|&k| self.location(k).map(|c| (k, c)))
            .collect()
    }

    pub fn occupant(&self, cell: Cell) -> Option<EntityKind> {
        EntityKind::ALL
            .iter()
            .copied()
            .find(|&k| self.location(k) == Some(cell))
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            robot: self.robot_start,
            held: None,
            clock: 0,
        }
    }

    pub fn to_json(&self) -> EnvJson {
        EnvJson {
            grid: GRID,
            entities: self
                .entities()
                .into_iter()
                .map(|(k, c)| EntityJson {
                    kind: k.name().to_string(),
                    x: c.x as usize,
                    y: c.y as usize,
                })
                .collect(),
            robot: [self.robot_start.x as usize, self.robot_start.y as usize],
        }
    }

    pub fn from_json(json: &EnvJson) -> Result<Environment, WorldError> {
        if json.grid != GRID {
            return Err(WorldError::InvalidEnvironment(format!(
                "grid size {} (expected {GRID})",
                json.grid
            )));
        }
        let mut entities = Vec::with_capacity(json.entities.len());
        for e in &json.entities {
            if e.x >= GRID || e.y >= GRID {
                return Err(WorldError::InvalidEnvironment(format!("{} out of bounds", e.kind)));
            }
            entities.push((e.kind.parse()?, Cell::new(e.x, e.y)));
        }
        let [rx, ry] = json.robot;
        if rx >= GRID || ry >= GRID {
            return Err(WorldError::InvalidEnvironment("robot out of bounds".into()));
        }
        Environment::new(&entities, Cell::new(rx, ry))
    }

    /// ASCII map; `R` marks the robot start, `.` empty cells.
    pub fn render(&self, robot: Option<Cell>) -> String {
        let robot = robot.unwrap_or(self.robot_start);
        let mut out = String::new();
        for y in 0..GRID {
            for x in 0..GRID {
                let cell = Cell::new(x, y);
                let ch = if cell == robot {
                    'R'
                } else {
                    self.occupant(cell).map(EntityKind::glyph).unwrap_or('.')
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityJson {
    pub kind: String,
    pub x: usize,
    pub y: usize,
}

/// Environment interchange format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvJson {
    pub grid: usize,
    pub entities: Vec<EntityJson>,
    pub robot: [usize; 2],
}

/// Robot pose, held item, and step count. With one instance per kind and no
/// drop action, the removed cell is always the home cell of the held object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub robot: Cell,
    pub held: Option<EntityKind>,
    pub clock: usize,
}

/// Number of distinct (robot, held) combinations.
pub const NUM_POSES: usize = NUM_CELLS * 4;

impl WorldState {
    /// Dense index of (robot, held), ignoring the clock.
    pub fn pose_index(&self) -> usize {
        let held = self.held.and_then(EntityKind::object_slot).map_or(0, |s| s + 1);
        self.robot.index() * 4 + held
    }

    pub fn from_pose_index(i: usize, clock: usize) -> WorldState {
        let held = match i % 4 {
            0 => None,
            1 => Some(EntityKind::Apple),
            2 => Some(EntityKind::Orange),
            _ => Some(EntityKind::Pear),
        };
        WorldState {
            robot: Cell::from_index(i / 4),
            held,
            clock,
        }
    }

    pub fn is_removed(&self, env: &Environment, kind: EntityKind) -> bool {
        kind.is_object() && self.held == Some(kind) && env.location(kind).is_some()
    }
}

/// Apply one action. Off-grid moves, GRAB on an empty cell, and GRAB while
/// already holding are no-ops; the clock always advances.
pub fn step(env: &Environment, s: &WorldState, a: Action) -> WorldState {
    let mut next = *s;
    next.clock += 1;
    let (x, y) = (s.robot.x as i32, s.robot.y as i32);
    let target = match a {
        Action::Up => Some((x, y - 1)),
        Action::Down => Some((x, y + 1)),
        Action::Left => Some((x - 1, y)),
        Action::Right => Some((x + 1, y)),
        Action::Grab => None,
    };
    match target {
        Some((nx, ny)) => {
            if (0..GRID as i32).contains(&nx) && (0..GRID as i32).contains(&ny) {
                next.robot = Cell::new(nx as usize, ny as usize);
            }
        }
        None => {
            if s.held.is_none() {
                if let Some(kind) = env.occupant(s.robot) {
                    if kind.is_object() {
                        next.held = Some(kind);
                    }
                }
            }
        }
    }
    next
}

fn distance_to(env: &Environment, s: &WorldState, kind: EntityKind) -> Option<usize> {
    if s.is_removed(env, kind) {
        return None;
    }
    env.location(kind).map(|c| c.manhattan(s.robot))
}

/// Valuation of the transition `prev -> cur`.
pub fn valuation(env: &Environment, prev: &WorldState, cur: &WorldState) -> Valuation {
    let mut v = Valuation::empty();
    for p in Predicate::ALL {
        let value = match p.kind() {
            PredicateKind::Object => cur.held == Some(EntityKind::of_predicate(p)),
            PredicateKind::Destination => env
                .location(EntityKind::of_predicate(p))
                .is_some_and(|c| c.manhattan(cur.robot) <= 1),
            PredicateKind::Relation => {
                let kind = EntityKind::of_predicate(p);
                if cur.held == Some(kind) {
                    true
                } else {
                    match (distance_to(env, prev, kind), distance_to(env, cur, kind)) {
                        (Some(before), Some(after)) => after < before,
                        _ => false,
                    }
                }
            }
        };
        v.set(p, value);
    }
    v
}

/// Valuation at step `t` (1-based) of a replayed state sequence
/// `states[0..=n]`, where `states[0]` is the start state.
pub fn valuation_at(env: &Environment, states: &[WorldState], t: usize) -> Result<Valuation, WorldError> {
    if t == 0 || t >= states.len() {
        return Err(WorldError::NoSuchStep {
            step: t,
            len: states.len().saturating_sub(1),
        });
    }
    Ok(valuation(env, &states[t - 1], &states[t]))
}

/// States visited while replaying `actions`, starting state included.
pub fn replay(env: &Environment, actions: &[Action]) -> Vec<WorldState> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    let mut s = env.initial_state();
    states.push(s);
    for &a in actions {
        s = step(env, &s, a);
        states.push(s);
    }
    states
}

/// Valuations for steps 1..=|actions|.
pub fn trace_of(env: &Environment, actions: &[Action]) -> Vec<Valuation> {
    let states = replay(env, actions);
    states.windows(2).map(|w| valuation(env, &w[0], &w[1])).collect()
}

/// Entity kinds that must be present for a set of predicates.
pub fn required_entities(preds: &[Predicate]) -> Vec<EntityKind> {
    let mut kinds: Vec<EntityKind> = preds.iter().map(|&p| EntityKind::of_predicate(p)).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

/// Place all required entities, include each other kind with probability
/// 0.3, then put the robot on a random empty cell.
pub fn sample_environment<R: Rng + ?Sized>(rng: &mut R, required: &[Predicate]) -> Environment {
    let required = required_entities(required);
    let mut kinds: Vec<EntityKind> = Vec::new();
    for kind in EntityKind::ALL {
        if required.contains(&kind) || rng.gen_bool(DISTRACTOR_PROB) {
            kinds.push(kind);
        }
    }
    let mut cells: Vec<usize> = (0..NUM_CELLS).collect();
    cells.shuffle(rng);
    let entities: Vec<(EntityKind, Cell)> = kinds
        .iter()
        .zip(cells.iter())
        .map(|(&k, &c)| (k, Cell::from_index(c)))
        .collect();
    let robot = Cell::from_index(cells[kinds.len()]);
    Environment::new(&entities, robot).expect("sampled cells are distinct")
}
