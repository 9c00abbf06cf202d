//! Automaton-guided planning in the grid world.
//!
//! The search space is the product of robot pose (cell, held item) and
//! automaton state. For one (formula, environment) pair, [`ProductPlanner`]
//! computes the exact number of actions from every product node to the
//! nearest accepting node with a reverse breadth-first search; everything
//! else (the Boltzmann policy, trajectory likelihoods, the oracle search,
//! rollouts) reads that table.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{Automaton, StateId, Valuation};
use crate::ltl::Formula;
use crate::world::{self, Action, Environment, WorldState, HORIZON, NUM_POSES};

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no accepting trajectory within {0} steps")]
    NotFound(usize),
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Inverse temperature of the Boltzmann policy.
    pub beta: f64,
    pub horizon: usize,
    /// Probability mass spread uniformly over all actions.
    pub epsilon_floor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            beta: 2.0,
            horizon: HORIZON,
            epsilon_floor: 0.01,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> bool {
        self.beta > 0.0 && (0.0..=0.2).contains(&self.epsilon_floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProductNode {
    pub world: WorldState,
    pub state: StateId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Greedy,
    Sample,
}

/// Distance table for one (automaton, environment) pair.
pub struct ProductPlanner<'a> {
    env: &'a Environment,
    aut: &'a Automaton,
    /// `moves[pose * 5 + action]` = (next pose, valuation of that step).
    moves: Vec<(u16, Valuation)>,
    dist: Vec<u32>,
}

impl<'a> ProductPlanner<'a> {
    pub fn new(aut: &'a Automaton, env: &'a Environment) -> ProductPlanner<'a> {
        let mut moves = Vec::with_capacity(NUM_POSES * Action::ALL.len());
        for pose in 0..NUM_POSES {
            let s = WorldState::from_pose_index(pose, 0);
            for a in Action::ALL {
                let n = world::step(env, &s, a);
                moves.push((n.pose_index() as u16, world::valuation(env, &s, &n)));
            }
        }

        let q = aut.num_states();
        let total = NUM_POSES * q;
        // predecessor lists in CSR form
        let mut counts = vec![0u32; total + 1];
        let mut edges = Vec::with_capacity(total * Action::ALL.len());
        for pose in 0..NUM_POSES {
            for a in 0..Action::ALL.len() {
                let (np, v) = moves[pose * 5 + a];
                let letter = aut.letter(v);
                for s in 0..q {
                    let ns = aut.next_letter(s, letter);
                    let from = pose * q + s;
                    let to = np as usize * q + ns;
                    counts[to + 1] += 1;
                    edges.push((to as u32, from as u32));
                }
            }
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut preds = vec![0u32; edges.len()];
        for &(to, from) in &edges {
            let slot = &mut fill[to as usize];
            preds[*slot as usize] = from;
            *slot += 1;
        }

        let mut dist = vec![UNREACHABLE; total];
        let mut queue = std::collections::VecDeque::new();
        for pose in 0..NUM_POSES {
            for s in 0..q {
                if aut.is_accepting(s) {
                    dist[pose * q + s] = 0;
                    queue.push_back(pose * q + s);
                }
            }
        }
        while let Some(n) = queue.pop_front() {
            let d = dist[n] + 1;
            for &p in &preds[counts[n] as usize..counts[n + 1] as usize] {
                if dist[p as usize] == UNREACHABLE {
                    dist[p as usize] = d;
                    queue.push_back(p as usize);
                }
            }
        }

        ProductPlanner { env, aut, moves, dist }
    }

    pub fn automaton(&self) -> &Automaton {
        self.aut
    }

    pub fn environment(&self) -> &Environment {
        self.env
    }

    pub fn start(&self) -> ProductNode {
        ProductNode {
            world: self.env.initial_state(),
            state: self.aut.initial(),
        }
    }

    pub fn advance(&self, node: &ProductNode, a: Action) -> ProductNode {
        let (np, v) = self.moves[node.world.pose_index() * 5 + a.index()];
        ProductNode {
            world: WorldState::from_pose_index(np as usize, node.world.clock + 1),
            state: self.aut.next(node.state, v),
        }
    }

    pub fn is_accepting(&self, node: &ProductNode) -> bool {
        self.aut.is_accepting(node.state)
    }

    /// Fewest further actions until the automaton accepts, or `None` if that
    /// takes more than `horizon_left` actions.
    pub fn distance(&self, node: &ProductNode, horizon_left: usize) -> Option<usize> {
        let d = self.dist[node.world.pose_index() * self.aut.num_states() + node.state];
        (d != UNREACHABLE && d as usize <= horizon_left).then_some(d as usize)
    }

    /// Action distribution at `node`: Boltzmann over post-action distance,
    /// mixed with a uniform floor.
    pub fn policy(&self, node: &ProductNode, cfg: &PolicyConfig) -> [f64; 5] {
        let horizon_left = cfg.horizon.saturating_sub(node.world.clock);
        let mut dists = [None; 5];
        if horizon_left > 0 {
            for a in Action::ALL {
                let next = self.advance(node, a);
                dists[a.index()] = self.distance(&next, horizon_left - 1);
            }
        }
        boltzmann(&dists, cfg)
    }

    /// Mean per-step probability of `actions` under the policy.
    pub fn trajectory_likelihood(&self, actions: &[Action], cfg: &PolicyConfig) -> Result<f64, PlanError> {
        if actions.is_empty() {
            return Err(PlanError::EmptyTrajectory);
        }
        let mut node = self.start();
        let mut total = 0.0;
        for &a in actions {
            total += self.policy(&node, cfg)[a.index()];
            node = self.advance(&node, a);
        }
        Ok(total / actions.len() as f64)
    }

    /// A shortest accepting trajectory, with ties among optimal actions broken
    /// uniformly at random.
    pub fn find_accepting<R: Rng + ?Sized>(&self, rng: &mut R, max_len: usize) -> Result<Vec<Action>, PlanError> {
        let mut node = self.start();
        let Some(mut d) = self.distance(&node, max_len) else {
            return Err(PlanError::NotFound(max_len));
        };
        if d == 0 {
            // the start node is never accepting; kept for completeness
            return Err(PlanError::NotFound(max_len));
        }
        let mut actions = Vec::with_capacity(d);
        while d > 0 {
            let options: Vec<Action> = Action::ALL
                .iter()
                .copied()
                .filter(|&a| self.distance(&self.advance(&node, a), d - 1) == Some(d - 1))
                .collect();
            let &a = options.choose(rng).expect("a shortest-path successor exists");
            actions.push(a);
            node = self.advance(&node, a);
            d -= 1;
        }
        Ok(actions)
    }

    /// Execute the policy until the automaton accepts or the horizon is hit.
    pub fn rollout<R: Rng + ?Sized>(&self, cfg: &PolicyConfig, mode: RolloutMode, rng: &mut R) -> Rollout {
        let mut node = self.start();
        let mut actions = Vec::new();
        let mut probs = Vec::new();
        while actions.len() < cfg.horizon && !(node.world.clock > 0 && self.is_accepting(&node)) {
            let p = self.policy(&node, cfg);
            let a = match mode {
                RolloutMode::Greedy => argmax_action(&p),
                RolloutMode::Sample => sample_action(&p, rng),
            };
            probs.push(p);
            actions.push(a);
            node = self.advance(&node, a);
        }
        let accepted = !actions.is_empty() && self.is_accepting(&node);
        Rollout {
            actions,
            probs,
            accepted,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub actions: Vec<Action>,
    /// Policy distribution at each step, before the action was taken.
    pub probs: Vec<[f64; 5]>,
    pub accepted: bool,
}

/// Boltzmann weights `exp(-beta * d)` over finite distances, uniform if none
/// is finite, then mixed with the epsilon floor.
pub fn boltzmann(dists: &[Option<usize>; 5], cfg: &PolicyConfig) -> [f64; 5] {
    let n = dists.len() as f64;
    let mut p = [0.0; 5];
    match dists.iter().flatten().min() {
        None => p = [1.0 / n; 5],
        Some(&best) => {
            let mut z = 0.0;
            for (pi, d) in p.iter_mut().zip(dists) {
                if let Some(d) = d {
                    *pi = (-cfg.beta * (*d as f64 - best as f64)).exp();
                    z += *pi;
                }
            }
            for pi in p.iter_mut() {
                *pi /= z;
            }
        }
    }
    for pi in p.iter_mut() {
        *pi = (1.0 - cfg.epsilon_floor) * *pi + cfg.epsilon_floor / n;
    }
    p
}

fn argmax_action(p: &[f64; 5]) -> Action {
    let mut best = 0;
    for i in 1..5 {
        if p[i] > p[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

fn sample_action<R: Rng + ?Sized>(p: &[f64; 5], rng: &mut R) -> Action {
    let mut u: f64 = rng.gen();
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return Action::ALL[i];
        }
        u -= pi;
    }
    Action::Grab
}

pub fn trajectory_likelihood(
    f: &Formula,
    env: &Environment,
    actions: &[Action],
    cfg: &PolicyConfig,
) -> Result<f64, PlanError> {
    let aut = Automaton::compile(f);
    ProductPlanner::new(&aut, env).trajectory_likelihood(actions, cfg)
}

pub fn find_accepting_trajectory<R: Rng + ?Sized>(
    f: &Formula,
    env: &Environment,
    rng: &mut R,
    max_len: usize,
) -> Result<Vec<Action>, PlanError> {
    let aut = Automaton::compile(f);
    ProductPlanner::new(&aut, env).find_accepting(rng, max_len)
}

pub fn rollout<R: Rng + ?Sized>(
    f: &Formula,
    env: &Environment,
    cfg: &PolicyConfig,
    mode: RolloutMode,
    rng: &mut R,
) -> Rollout {
    let aut = Automaton::compile(f);
    ProductPlanner::new(&aut, env).rollout(cfg, mode, rng)
}
