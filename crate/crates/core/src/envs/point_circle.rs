//! Planar point mass with velocity actions. Reward is the tangential speed
//! around the origin; cost 1 activates whenever the agent leaves the
//! |x| <= X_LIMIT strip. Episodes run a fixed length.

use super::{ActionKind, EnvSpec, Environment, StepOutcome};
use crate::cmdp::Action;
use crate::error::{EvoError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MAX_EPISODE_LEN: usize = 200;
const DT: f64 = 0.1;
const X_LIMIT: f64 = 1.2;
const POS_CLAMP: f64 = 2.0;

pub struct PointCircle {
    spec: EnvSpec,
    pos: [f64; 2],
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl PointCircle {
    pub fn new() -> Self {
        let spec = EnvSpec {
            observation_dim: 4,
            action_kind: ActionKind::Continuous {
                dim: 2,
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
            },
            max_episode_len: MAX_EPISODE_LEN,
            cost_limit_default: 25.0,
            // |p x a| / max(|p|, .3) <= |a| <= sqrt(2).
            reward_bound: std::f64::consts::SQRT_2,
        };
        Self { spec, pos: [0.0, 0.0], steps: 0, finished: true, rng: crate::rng::substream(0, &[]) }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], X_LIMIT - self.pos[0], X_LIMIT + self.pos[0]]
    }
}

impl Default for PointCircle {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointCircle {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = crate::rng::substream(seed, &[0x636972]);
        self.pos = [self.rng.gen_range(-0.5..0.5), self.rng.gen_range(-0.5..0.5)];
        self.steps = 0;
        self.finished = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.finished {
            return Err(EvoError::Usage("episode already finished".into()));
        }
        super::validate_action(&self.spec.action_kind, action)?;
        let a = match action {
            Action::Continuous(a) => a,
            _ => unreachable!(),
        };
        let [x, y] = self.pos;
        // Tangential speed around the origin: (p x v) / |p|.
        let radius = (x * x + y * y).sqrt().max(0.3);
        let reward = (x * a[1] - y * a[0]) / radius;
        self.pos[0] = (x + DT * a[0]).clamp(-POS_CLAMP, POS_CLAMP);
        self.pos[1] = (y + DT * a[1]).clamp(-POS_CLAMP, POS_CLAMP);
        let cost = if self.pos[0].abs() > X_LIMIT { 1.0 } else { 0.0 };
        self.steps += 1;
        if self.steps >= self.spec.max_episode_len {
            self.finished = true;
        }
        Ok(StepOutcome { observation: self.observation(), reward, cost, done: false })
    }
}
