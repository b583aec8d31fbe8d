//! N x N gridworld with hazard cells and a terminal goal.
//!
//! Eight hazard cells are placed by the layout seed across the middle band
//! (row 0 is the start row, the goal corner stays clear). Stepping onto a
//! hazard cell costs 1; hazards are boggy: while on one, a move only
//! succeeds with probability `ESCAPE_PROB`. The per-step reward is
//! proportional to the negative Manhattan distance to the goal (so slow or
//! stuck agents keep bleeding reward) plus a +1 terminal bonus at the goal.

use super::{ActionKind, EnvSpec, Environment, StepOutcome};
use crate::cmdp::Action;
use crate::error::{EvoError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const GRID_N: usize = 8;
pub const N_HAZARDS: usize = 8;
pub const MAX_EPISODE_LEN: usize = 200;
/// Probability a random action replaces the chosen one.
const SLIP_PROB: f64 = 0.1;
/// Probability of moving off a hazard cell per attempt.
const ESCAPE_PROB: f64 = 0.4;

pub struct HazardGridworld {
    spec: EnvSpec,
    hazards: Vec<(usize, usize)>,
    goal: (usize, usize),
    shaping_weight: f64,
    agent: (usize, usize),
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl HazardGridworld {
    pub fn new(layout_seed: u64, shaping_weight: f64) -> Self {
        let goal = (GRID_N - 1, GRID_N - 1);
        // Hazards are scattered by the layout seed across the middle band
        // (rows 2..6), the region every start-to-goal route crosses; the
        // start row and the goal's row stay clear.
        let mut candidates: Vec<(usize, usize)> = (2..GRID_N - 2)
            .flat_map(|r| (0..GRID_N).map(move |c| (r, c)))
            .filter(|&cell| cell != goal)
            .collect();
        let mut rng = crate::rng::substream(layout_seed, &[0x677269_64]);
        let mut hazards = Vec::with_capacity(N_HAZARDS);
        for _ in 0..N_HAZARDS {
            let idx = rng.gen_range(0..candidates.len());
            hazards.push(candidates.swap_remove(idx));
        }
        hazards.sort_unstable();
        let spec = EnvSpec {
            observation_dim: 4 + 2 * N_HAZARDS,
            action_kind: ActionKind::Discrete { n: 4 },
            max_episode_len: MAX_EPISODE_LEN,
            cost_limit_default: 25.0,
            reward_bound: 1.0 + shaping_weight,
        };
        Self {
            spec,
            hazards,
            goal,
            shaping_weight,
            agent: (0, 0),
            steps: 0,
            finished: true,
            rng: crate::rng::substream(0, &[]),
        }
    }

    pub fn hazard_cells(&self) -> &[(usize, usize)] {
        &self.hazards
    }

    pub fn agent_on_hazard(&self) -> bool {
        self.hazards.contains(&self.agent)
    }

    fn observation(&self) -> Vec<f64> {
        let scale = (GRID_N - 1) as f64;
        let (r, c) = self.agent;
        let mut obs = Vec::with_capacity(self.spec.observation_dim);
        obs.push(r as f64 / scale);
        obs.push(c as f64 / scale);
        obs.push((self.goal.0 as f64 - r as f64) / scale);
        obs.push((self.goal.1 as f64 - c as f64) / scale);
        for &(hr, hc) in &self.hazards {
            obs.push((hr as f64 - r as f64) / scale);
            obs.push((hc as f64 - c as f64) / scale);
        }
        obs
    }

    fn manhattan_to_goal(&self, cell: (usize, usize)) -> f64 {
        let dr = (self.goal.0 as i64 - cell.0 as i64).abs();
        let dc = (self.goal.1 as i64 - cell.1 as i64).abs();
        (dr + dc) as f64
    }
}

impl Environment for HazardGridworld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = crate::rng::substream(seed, &[0x68617a]);
        let start_col = self.rng.gen_range(0..GRID_N);
        self.agent = (0, start_col);
        self.steps = 0;
        self.finished = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.finished {
            return Err(EvoError::Usage("episode already finished".into()));
        }
        super::validate_action(&self.spec.action_kind, action)?;
        let chosen = match action {
            Action::Discrete(a) => *a,
            _ => unreachable!(),
        };
        let executed = if self.rng.gen_range(0.0..1.0) < SLIP_PROB {
            self.rng.gen_range(0..4)
        } else {
            chosen
        };
        let stuck = self.agent_on_hazard() && self.rng.gen_range(0.0..1.0) >= ESCAPE_PROB;
        if !stuck {
            let (r, c) = self.agent;
            self.agent = match executed {
                0 => (r.saturating_sub(1), c),
                1 => ((r + 1).min(GRID_N - 1), c),
                2 => (r, c.saturating_sub(1)),
                3 => (r, (c + 1).min(GRID_N - 1)),
                _ => unreachable!(),
            };
        }
        let new_dist = self.manhattan_to_goal(self.agent);
        let scale = 2.0 * (GRID_N - 1) as f64;
        let mut reward = -self.shaping_weight * new_dist / scale;
        let cost = if self.agent_on_hazard() { 1.0 } else { 0.0 };
        self.steps += 1;
        let at_goal = self.agent == self.goal;
        if at_goal {
            reward += 1.0;
        }
        let done = at_goal;
        if done || self.steps >= self.spec.max_episode_len {
            self.finished = true;
        }
        Ok(StepOutcome { observation: self.observation(), reward, cost, done })
    }
}
