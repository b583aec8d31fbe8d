//! Desk-scale CMDP environments behind a single trait: a hazard gridworld
//! (navigation with indicator costs), a planar point mass circling the
//! origin inside boundary walls, and a 1-D velocity-limited chain. Costs are
//! always 0 or 1 per step.

mod hazard_grid;
mod point_circle;
mod velocity_chain;

pub use hazard_grid::HazardGridworld;
pub use point_circle::PointCircle;
pub use velocity_chain::VelocityChain;

use crate::cmdp::Action;
use crate::error::{EvoError, Result};

/// Action-space description.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    Discrete { n: usize },
    Continuous { dim: usize, low: Vec<f64>, high: Vec<f64> },
}

/// Static environment metadata.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub action_kind: ActionKind,
    pub max_episode_len: usize,
    pub cost_limit_default: f64,
    /// Declared bound on |reward| per step (plus terminal bonus).
    pub reward_bound: f64,
}

/// One transition's outcome.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

/// A single-owner environment instance. Evolution is deterministic given
/// the reset seed and the action sequence.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Reinitialize: reseeds the internal RNG stream and returns the first
    /// observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// One transition. Stepping a finished episode is a usage error;
    /// actions must match the declared action kind.
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;
}

/// Environment ids accepted by the CLI and config files.
pub const ENV_IDS: [&str; 3] = ["hazard-grid", "point-circle", "velocity-chain"];

/// Instantiate an environment by id. `layout_seed` fixes any randomized
/// scene layout (hazard placement); per-episode randomness comes from the
/// seed passed to `reset`.
pub fn make_env(id: &str, layout_seed: u64, shaping_weight: f64) -> Result<Box<dyn Environment>> {
    match id {
        "hazard-grid" => Ok(Box::new(HazardGridworld::new(layout_seed, shaping_weight))),
        "point-circle" => Ok(Box::new(PointCircle::new())),
        "velocity-chain" => Ok(Box::new(VelocityChain::new())),
        other => Err(EvoError::InvalidInput(format!(
            "unknown environment id {other:?} (known: {})",
            ENV_IDS.join(", ")
        ))),
    }
}

pub(crate) fn validate_action(kind: &ActionKind, action: &Action) -> Result<()> {
    match (kind, action) {
        (ActionKind::Discrete { n }, Action::Discrete(a)) => {
            if a >= n {
                return Err(EvoError::InvalidInput(format!("action {a} out of range 0..{n}")));
            }
            Ok(())
        }
        (ActionKind::Continuous { dim, low, high }, Action::Continuous(a)) => {
            if a.len() != *dim {
                return Err(EvoError::InvalidInput(format!(
                    "action dim {} != {dim}",
                    a.len()
                )));
            }
            for (j, x) in a.iter().enumerate() {
                if !x.is_finite() || *x < low[j] - 1e-9 || *x > high[j] + 1e-9 {
                    return Err(EvoError::InvalidInput(format!(
                        "action component {j} = {x} outside [{}, {}]",
                        low[j], high[j]
                    )));
                }
            }
            Ok(())
        }
        _ => Err(EvoError::InvalidInput("action kind mismatch".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::Action;
    use rand::Rng;

    fn run_episode(
        env: &mut dyn Environment,
        seed: u64,
        actions: &[Action],
    ) -> (Vec<f64>, Vec<(Vec<f64>, f64, f64, bool)>) {
        let first = env.reset(seed);
        let mut transitions = Vec::new();
        for a in actions {
            let out = env.step(a).unwrap();
            let done = out.done;
            transitions.push((out.observation, out.reward, out.cost, out.done));
            if done {
                break;
            }
        }
        (first, transitions)
    }

    fn random_actions(env: &dyn Environment, rng: &mut impl Rng, n: usize) -> Vec<Action> {
        (0..n)
            .map(|_| match &env.spec().action_kind {
                ActionKind::Discrete { n } => Action::Discrete(rng.gen_range(0..*n)),
                ActionKind::Continuous { dim, low, high } => Action::Continuous(
                    (0..*dim).map(|j| rng.gen_range(low[j]..high[j])).collect(),
                ),
            })
            .collect()
    }

    #[test]
    fn same_seed_same_actions_bitwise_identical() {
        for id in ENV_IDS {
            let mut env = make_env(id, 3, 1.0).unwrap();
            let mut rng = crate::rng::substream(81, &[0]);
            let actions = random_actions(env.as_ref(), &mut rng, 60);
            let (o1, t1) = run_episode(env.as_mut(), 7, &actions);
            let (o2, t2) = run_episode(env.as_mut(), 7, &actions);
            assert_eq!(o1, o2, "{id}: reset observation mismatch");
            assert_eq!(t1.len(), t2.len());
            for (a, b) in t1.iter().zip(&t2) {
                assert_eq!(a.0, b.0, "{id}: observation drift");
                assert_eq!(a.1.to_bits(), b.1.to_bits(), "{id}: reward drift");
                assert_eq!(a.2.to_bits(), b.2.to_bits(), "{id}: cost drift");
                assert_eq!(a.3, b.3);
            }
        }
    }

    #[test]
    fn costs_are_indicator_and_rewards_bounded() {
        for id in ENV_IDS {
            let mut env = make_env(id, 5, 1.0).unwrap();
            let bound = env.spec().reward_bound;
            let mut rng = crate::rng::substream(82, &[1]);
            for ep in 0..5u64 {
                let actions = random_actions(env.as_ref(), &mut rng, env.spec().max_episode_len);
                let (_, transitions) = run_episode(env.as_mut(), 100 + ep, &actions);
                for (_, r, c, _) in &transitions {
                    assert!(*c == 0.0 || *c == 1.0, "{id}: cost {c}");
                    assert!(r.abs() <= bound + 1e-12, "{id}: reward {r} over bound {bound}");
                }
            }
        }
    }

    #[test]
    fn episode_never_exceeds_max_len() {
        for id in ENV_IDS {
            let mut env = make_env(id, 5, 1.0).unwrap();
            let max_len = env.spec().max_episode_len;
            let mut rng = crate::rng::substream(83, &[2]);
            let actions = random_actions(env.as_ref(), &mut rng, max_len * 2);
            env.reset(42);
            let mut steps = 0;
            for a in &actions {
                let out = env.step(a).unwrap();
                steps += 1;
                if out.done {
                    break;
                }
                if steps == max_len {
                    break;
                }
            }
            assert!(steps <= max_len);
            // After max_len non-terminal steps, further stepping is a usage
            // error (episode over by truncation).
            if steps == max_len {
                assert!(env.step(&actions[0]).is_err(), "{id}: step past truncation");
            }
        }
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let mut env = make_env("hazard-grid", 11, 1.0).unwrap();
        env.reset(1);
        // Drive to the goal with a scripted sweep: go right then down a lot.
        let mut done = false;
        for _ in 0..400 {
            let out = env.step(&Action::Discrete(3)).unwrap();
            if out.done {
                done = true;
                break;
            }
            let out = env.step(&Action::Discrete(1)).unwrap();
            if out.done {
                done = true;
                break;
            }
        }
        if done {
            assert!(matches!(env.step(&Action::Discrete(0)), Err(EvoError::Usage(_))));
        }
    }

    #[test]
    fn invalid_actions_rejected() {
        let mut env = make_env("hazard-grid", 11, 1.0).unwrap();
        env.reset(1);
        assert!(env.step(&Action::Discrete(4)).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
        let mut env = make_env("velocity-chain", 11, 1.0).unwrap();
        env.reset(1);
        assert!(env.step(&Action::Continuous(vec![2.0])).is_err());
    }

    #[test]
    fn point_circle_observation_within_declared_bounds() {
        let mut env = make_env("point-circle", 0, 1.0).unwrap();
        let obs = env.reset(9);
        assert_eq!(obs.len(), env.spec().observation_dim);
        // Positions start in the unit square and stay clamped to [-2, 2].
        let mut rng = crate::rng::substream(84, &[3]);
        for _ in 0..200 {
            let a = Action::Continuous(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let out = env.step(&a).unwrap();
            assert!(out.observation[0].abs() <= 2.0);
            assert!(out.observation[1].abs() <= 2.0);
        }
    }

    #[test]
    fn hazard_grid_start_distribution_chi_square() {
        // Starts are uniform over the 8 free cells of row 0. Chi-square
        // goodness of fit at p > 0.01: critical value for 7 dof is 18.4753
        // (chi2.ppf(0.99, 7)).
        let mut env = HazardGridworld::new(3, 1.0);
        let mut counts = vec![0usize; 8];
        let resets = 800;
        for i in 0..resets {
            let obs = env.reset(10_000 + i);
            let col = (obs[1] * 7.0).round() as usize;
            let row = (obs[0] * 7.0).round() as usize;
            assert_eq!(row, 0);
            counts[col] += 1;
        }
        let expected = resets as f64 / 8.0;
        let stat: f64 =
            counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(stat < 18.475306906582357, "chi-square stat {stat}");
    }

    #[test]
    fn hazard_grid_cost_on_hazard_and_goal_reward() {
        let env = HazardGridworld::new(3, 1.0);
        let hazards = env.hazard_cells().to_vec();
        assert_eq!(hazards.len(), 8);
        // Scripted walk onto a known hazard cell: costs must be flagged
        // exactly when the agent lands on a hazard.
        let mut env = HazardGridworld::new(3, 1.0);
        let mut rng = crate::rng::substream(85, &[4]);
        let mut seen_cost = false;
        for ep in 0..60u64 {
            env.reset(ep);
            for _ in 0..env.spec().max_episode_len {
                let a = Action::Discrete(rng.gen_range(0..4));
                let out = env.step(&a).unwrap();
                let on_hazard = env.agent_on_hazard();
                assert_eq!(out.cost == 1.0, on_hazard, "cost/hazard mismatch");
                seen_cost |= out.cost == 1.0;
                if out.done {
                    // Terminal only at the goal, with the +1 bonus included.
                    assert!(out.reward >= 1.0 - 1e-9);
                    break;
                }
            }
        }
        assert!(seen_cost, "random walk never touched a hazard");
    }

    #[test]
    fn velocity_chain_cost_and_reward_semantics() {
        let mut env = make_env("velocity-chain", 0, 1.0).unwrap();
        env.reset(5);
        let fast = env.step(&Action::Continuous(vec![0.9])).unwrap();
        assert_eq!(fast.cost, 1.0);
        assert!((fast.reward - 0.9).abs() < 1e-12);
        let slow = env.step(&Action::Continuous(vec![0.3])).unwrap();
        assert_eq!(slow.cost, 0.0);
        assert!((slow.reward - 0.3).abs() < 1e-12);
    }

    #[test]
    fn unknown_env_id_rejected() {
        assert!(make_env("no-such-env", 0, 1.0).is_err());
    }
}
