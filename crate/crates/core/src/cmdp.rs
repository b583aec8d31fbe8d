//! CMDP data model: step records, trajectories, discounted returns and
//! generalized advantage estimation. Everything here is a pure function over
//! immutable inputs.

use crate::error::{EvoError, Result};

/// A single environment action.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// One transition as recorded during a rollout. `log_prob` is the log
/// density/mass of `action` under the policy that generated it.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub cost: f64,
    pub log_prob: f64,
    pub done: bool,
}

/// One episode. Non-empty; only the final step may be terminal.
#[derive(Debug, Clone)]
pub struct Trajectory {
    steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn new(steps: Vec<StepRecord>) -> Result<Self> {
        if steps.is_empty() {
            return Err(EvoError::InvalidInput("trajectory must be non-empty".into()));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.cost < 0.0 {
                return Err(EvoError::InvalidInput(format!("negative cost at step {i}")));
            }
            if !s.log_prob.is_finite() {
                return Err(EvoError::InvalidInput(format!("non-finite log_prob at step {i}")));
            }
            if s.done && i + 1 != steps.len() {
                return Err(EvoError::InvalidInput(format!(
                    "done=true at non-final step {i}"
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty trajectories
    }

    /// Whether the episode terminated (as opposed to being truncated).
    pub fn terminated(&self) -> bool {
        self.steps.last().map(|s| s.done).unwrap_or(false)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }
}

/// Sum of `gamma^t * x[t]`.
pub fn discounted_return(values: &[f64], gamma: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(EvoError::InvalidInput("empty sequence".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EvoError::InvalidInput(format!("gamma {gamma} not in (0,1]")));
    }
    let mut total = 0.0;
    let mut disc = 1.0;
    for &v in values {
        total += disc * v;
        disc *= gamma;
    }
    Ok(total)
}

/// Discounted cumulative cost of one trajectory.
pub fn cumulative_cost(traj: &Trajectory, gamma: f64) -> Result<f64> {
    discounted_return(&traj.costs(), gamma)
}

/// GAE(lambda) advantages for one per-step signal.
///
/// `values` must hold one entry per step plus the terminal bootstrap
/// (0 when the episode terminated, the value prediction when truncated).
pub fn gae_advantages(signal: &[f64], values: &[f64], gamma: f64, lam: f64) -> Result<Vec<f64>> {
    if values.len() != signal.len() + 1 {
        return Err(EvoError::InvalidInput(format!(
            "values length {} != steps {} + 1",
            values.len(),
            signal.len()
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EvoError::InvalidInput(format!("gamma {gamma} not in (0,1]")));
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(EvoError::InvalidInput(format!("lambda {lam} not in [0,1]")));
    }
    let n = signal.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = signal[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lam * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}

/// Per-step arrays for a whole batch of trajectories, ready for the policy
/// and value updates. Reward advantages are normalized to zero mean / unit
/// variance; cost advantages are kept on their absolute scale because the
/// constraint consumes them in cost units.
#[derive(Debug, Clone)]
pub struct ProcessedBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub reward_advantages: Vec<f64>,
    pub cost_advantages: Vec<f64>,
    pub reward_returns: Vec<f64>,
    pub cost_returns: Vec<f64>,
    /// Discounted cumulative cost, one entry per trajectory.
    pub cumulative_costs: Vec<f64>,
    /// Index of the source trajectory for every flat entry.
    pub traj_index: Vec<usize>,
    pub gamma: f64,
    pub gae_lambda: f64,
}

impl ProcessedBatch {
    /// Build the flat batch. `reward_values` / `cost_values` carry, per
    /// trajectory, one value prediction per step plus the terminal bootstrap
    /// (callers pass 0 for terminated episodes).
    pub fn from_trajectories(
        trajectories: &[Trajectory],
        reward_values: &[Vec<f64>],
        cost_values: &[Vec<f64>],
        gamma: f64,
        gae_lambda: f64,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(EvoError::InvalidInput("no trajectories".into()));
        }
        if reward_values.len() != trajectories.len() || cost_values.len() != trajectories.len() {
            return Err(EvoError::InvalidInput("values/trajectory count mismatch".into()));
        }
        let total: usize = trajectories.iter().map(|t| t.len()).sum();
        let mut batch = ProcessedBatch {
            states: Vec::with_capacity(total),
            actions: Vec::with_capacity(total),
            log_probs: Vec::with_capacity(total),
            reward_advantages: Vec::with_capacity(total),
            cost_advantages: Vec::with_capacity(total),
            reward_returns: Vec::with_capacity(total),
            cost_returns: Vec::with_capacity(total),
            cumulative_costs: Vec::with_capacity(trajectories.len()),
            traj_index: Vec::with_capacity(total),
            gamma,
            gae_lambda,
        };
        for (ti, traj) in trajectories.iter().enumerate() {
            let rv = &reward_values[ti];
            let cv = &cost_values[ti];
            let adv_r = gae_advantages(&traj.rewards(), rv, gamma, gae_lambda)?;
            let adv_c = gae_advantages(&traj.costs(), cv, gamma, gae_lambda)?;
            batch.cumulative_costs.push(cumulative_cost(traj, gamma)?);
            for (si, step) in traj.steps().iter().enumerate() {
                batch.states.push(step.state.clone());
                batch.actions.push(step.action.clone());
                batch.log_probs.push(step.log_prob);
                batch.reward_advantages.push(adv_r[si]);
                batch.cost_advantages.push(adv_c[si]);
                // GAE return targets: advantage + value.
                batch.reward_returns.push(adv_r[si] + rv[si]);
                batch.cost_returns.push(adv_c[si] + cv[si]);
                batch.traj_index.push(ti);
            }
        }
        normalize_in_place(&mut batch.reward_advantages);
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Mean cumulative cost over the batch trajectories (the J_C estimate).
    pub fn mean_cumulative_cost(&self) -> f64 {
        mean(&self.cumulative_costs)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn normalize_in_place(xs: &mut [f64]) {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    let sd = var.sqrt();
    if sd > 1e-12 {
        for x in xs.iter_mut() {
            *x = (*x - m) / sd;
        }
    } else {
        for x in xs.iter_mut() {
            *x -= m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn step(reward: f64, cost: f64, done: bool) -> StepRecord {
        StepRecord {
            state: vec![0.0],
            action: Action::Discrete(0),
            reward,
            cost,
            log_prob: -1.0,
            done,
        }
    }

    /// Independent oracle: recursive definition G_t = x_t + gamma * G_{t+1}.
    fn return_oracle(xs: &[f64], gamma: f64) -> f64 {
        match xs.split_first() {
            None => 0.0,
            Some((head, tail)) => head + gamma * return_oracle(tail, gamma),
        }
    }

    /// Independent O(T^2) oracle: A_t = sum_l (gamma*lam)^l * delta_{t+l}.
    fn gae_oracle(signal: &[f64], values: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
        let n = signal.len();
        let deltas: Vec<f64> = (0..n)
            .map(|t| signal[t] + gamma * values[t + 1] - values[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut w = 1.0;
                for l in t..n {
                    acc += w * deltas[l];
                    w *= gamma * lam;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn discounted_return_undiscounted_sum() {
        assert_eq!(discounted_return(&[1.0, 2.0, 3.0], 1.0).unwrap(), 6.0);
    }

    #[test]
    fn discounted_return_half_gamma() {
        assert_eq!(discounted_return(&[1.0, 1.0], 0.5).unwrap(), 1.5);
    }

    #[test]
    fn discounted_return_matches_recursive_oracle() {
        let mut rng = crate::rng::substream(11, &[0]);
        let xs: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = discounted_return(&xs, 0.99).unwrap();
        let want = return_oracle(&xs, 0.99);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn discounted_return_rejects_empty() {
        assert!(discounted_return(&[], 0.9).is_err());
    }

    #[test]
    fn cumulative_cost_zero_costs() {
        let t = Trajectory::new(vec![step(1.0, 0.0, false), step(1.0, 0.0, false)]).unwrap();
        assert_eq!(cumulative_cost(&t, 0.99).unwrap(), 0.0);
    }

    #[test]
    fn cumulative_cost_unit_costs_gamma_one() {
        let t = Trajectory::new(vec![
            step(0.0, 1.0, false),
            step(0.0, 1.0, false),
            step(0.0, 1.0, true),
        ])
        .unwrap();
        assert_eq!(cumulative_cost(&t, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn cumulative_cost_matches_oracle() {
        let mut rng = crate::rng::substream(12, &[0]);
        let costs: Vec<f64> = (0..15).map(|_| rng.gen_range(0.0..2.0)).collect();
        let steps: Vec<StepRecord> = costs.iter().map(|&c| step(0.0, c, false)).collect();
        let t = Trajectory::new(steps).unwrap();
        let got = cumulative_cost(&t, 0.97).unwrap();
        let want = return_oracle(&costs, 0.97);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gae_lambda_zero_is_td_residual() {
        let signal = [1.0, -0.5, 2.0];
        let values = [0.3, 0.1, -0.2, 0.4];
        let adv = gae_advantages(&signal, &values, 0.9, 0.0).unwrap();
        for t in 0..3 {
            let delta = signal[t] + 0.9 * values[t + 1] - values[t];
            assert!((adv[t] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_lambda_one_gamma_one_telescopes() {
        let signal = [1.0, 2.0, 3.0];
        let values = [0.5, -1.0, 0.25, 2.0];
        let adv = gae_advantages(&signal, &values, 1.0, 1.0).unwrap();
        for t in 0..3 {
            let remaining: f64 = signal[t..].iter().sum::<f64>() + values[3];
            assert!((adv[t] - (remaining - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_double_loop_oracle() {
        let mut rng = crate::rng::substream(13, &[0]);
        let signal: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let adv = gae_advantages(&signal, &values, 0.99, 0.95).unwrap();
        let want = gae_oracle(&signal, &values, 0.99, 0.95);
        for t in 0..10 {
            assert!((adv[t] - want[t]).abs() < 1e-10, "t={t}: {} vs {}", adv[t], want[t]);
        }
    }

    #[test]
    fn gae_rejects_length_mismatch() {
        assert!(gae_advantages(&[1.0, 2.0], &[0.0, 0.0], 0.9, 0.9).is_err());
    }

    #[test]
    fn gae_exact_values_zero_advantage() {
        // With lam=1, gamma=1 and values equal to true remaining returns the
        // advantages vanish.
        let signal = [1.0, 2.0, -1.0, 0.5];
        let mut values = vec![0.0; 5];
        for t in (0..4).rev() {
            values[t] = signal[t] + values[t + 1];
        }
        let adv = gae_advantages(&signal, &values, 1.0, 1.0).unwrap();
        for a in adv {
            assert!(a.abs() < 1e-10);
        }
    }

    #[test]
    fn trajectory_rejects_mid_done() {
        let r = Trajectory::new(vec![step(0.0, 0.0, true), step(0.0, 0.0, false)]);
        assert!(r.is_err());
    }

    #[test]
    fn trajectory_rejects_negative_cost() {
        assert!(Trajectory::new(vec![step(0.0, -1.0, false)]).is_err());
    }

    #[test]
    fn processed_batch_shapes_and_normalization() {
        let t1 = Trajectory::new(vec![step(1.0, 0.0, false), step(0.5, 1.0, true)]).unwrap();
        let t2 = Trajectory::new(vec![step(-1.0, 0.0, false)]).unwrap();
        let batch = ProcessedBatch::from_trajectories(
            &[t1, t2],
            &[vec![0.1, 0.2, 0.0], vec![0.3, 0.4]],
            &[vec![0.0, 0.0, 0.0], vec![0.0, 0.0]],
            0.99,
            0.95,
        )
        .unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch.cumulative_costs.len(), 2);
        assert_eq!(batch.traj_index, vec![0, 0, 1]);
        let m = mean(&batch.reward_advantages);
        assert!(m.abs() < 1e-12);
        let var = batch
            .reward_advantages
            .iter()
            .map(|a| (a - m) * (a - m))
            .sum::<f64>()
            / 3.0;
        assert!((var - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn discounted_return_is_linear(
            xs in prop::collection::vec(-10.0f64..10.0, 1..20),
            ys_seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            gamma in 0.1f64..1.0,
        ) {
            let mut rng = crate::rng::substream(ys_seed, &[1]);
            let ys: Vec<f64> = (0..xs.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let lhs = discounted_return(&combo, gamma).unwrap();
            let rhs = a * discounted_return(&xs, gamma).unwrap()
                + b * discounted_return(&ys, gamma).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn cumulative_cost_nonnegative(
            costs in prop::collection::vec(0.0f64..5.0, 1..30),
            gamma in 0.1f64..1.0,
        ) {
            let steps: Vec<StepRecord> = costs.iter().map(|&c| step(0.0, c, false)).collect();
            let t = Trajectory::new(steps).unwrap();
            prop_assert!(cumulative_cost(&t, gamma).unwrap() >= 0.0);
        }
    }
}
