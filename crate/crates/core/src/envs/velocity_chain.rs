//! 1-D locomotion chain: the action commands a velocity in [-1, 1], reward
//! equals the velocity, and cost 1 activates when speed exceeds the limit.

use super::{ActionKind, EnvSpec, Environment, StepOutcome};
use crate::cmdp::Action;
use crate::error::{EvoError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MAX_EPISODE_LEN: usize = 200;
const DT: f64 = 0.1;
pub const VELOCITY_LIMIT: f64 = 0.5;
const POS_CLAMP: f64 = 20.0;

pub struct VelocityChain {
    spec: EnvSpec,
    pos: f64,
    last_velocity: f64,
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl VelocityChain {
    pub fn new() -> Self {
        let spec = EnvSpec {
            observation_dim: 2,
            action_kind: ActionKind::Continuous { dim: 1, low: vec![-1.0], high: vec![1.0] },
            max_episode_len: MAX_EPISODE_LEN,
            cost_limit_default: 25.0,
            reward_bound: 1.0,
        };
        Self {
            spec,
            pos: 0.0,
            last_velocity: 0.0,
            steps: 0,
            finished: true,
            rng: crate::rng::substream(0, &[]),
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos / POS_CLAMP, self.last_velocity]
    }
}

impl Default for VelocityChain {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for VelocityChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = crate::rng::substream(seed, &[0x76656c]);
        self.pos = self.rng.gen_range(-0.1..0.1);
        self.last_velocity = 0.0;
        self.steps = 0;
        self.finished = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.finished {
            return Err(EvoError::Usage("episode already finished".into()));
        }
        super::validate_action(&self.spec.action_kind, action)?;
        let v = match action {
            Action::Continuous(a) => a[0],
            _ => unreachable!(),
        };
        self.pos = (self.pos + DT * v).clamp(-POS_CLAMP, POS_CLAMP);
        self.last_velocity = v;
        let reward = v;
        let cost = if v.abs() > VELOCITY_LIMIT { 1.0 } else { 0.0 };
        self.steps += 1;
        if self.steps >= self.spec.max_episode_len {
            self.finished = true;
        }
        Ok(StepOutcome { observation: self.observation(), reward, cost, done: false })
    }
}
