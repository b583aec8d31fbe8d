//! Replay buffer with extreme prioritization: entry priorities are quantile
//! levels under the fitted reward and cost tails, and stored samples are
//! importance-reweighed against the current policy before augmenting the
//! tail fits.

use crate::cmdp::Action;
use crate::error::{EvoError, Result};
use crate::evt::{gpd_cdf_saturating, TailModel};
use rand::Rng;
use std::collections::VecDeque;
use std::sync::Arc;

/// Default buffer capacity.
pub const CAPACITY_DEFAULT: usize = 50_000;
/// Priority floor: non-extreme samples keep this much replay mass.
pub const P_FLOOR_DEFAULT: f64 = 1e-3;
/// Per-step importance-ratio clip bounds.
pub const RATIO_CLIP: (f64, f64) = (0.1, 10.0);
/// Entries older than this many epochs are evicted before augmentation.
pub const K_AGE_DEFAULT: usize = 5;

/// How the trajectory-level cost ratio is formed from per-step ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioMode {
    /// Single stored-step ratio applied to both the advantage and the cost.
    Literal,
    /// Clipped product of per-step ratios over the source trajectory for the
    /// cost; single-step ratio for the advantage.
    Product,
}

/// Per-step data of a stored source trajectory, shared by its entries.
#[derive(Debug)]
pub struct StoredTrajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
}

/// One replayable sample.
#[derive(Debug, Clone)]
pub struct ReplayEntry {
    pub state: Vec<f64>,
    pub action: Action,
    /// Reward advantage of this sample under its generating policy.
    pub reward_advantage: f64,
    /// Cumulative discounted cost of the source trajectory.
    pub trajectory_cost: f64,
    /// Log probability of `action` under the generating policy.
    pub log_prob_old: f64,
    pub epoch_id: usize,
    pub priority: f64,
    pub trajectory: Arc<StoredTrajectory>,
}

/// Bounded FIFO of entries with a running priority sum.
pub struct ReplayBuffer {
    entries: VecDeque<ReplayEntry>,
    capacity: usize,
    p_floor: f64,
    priority_sum: f64,
    pushes_since_recompute: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, p_floor: f64) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity,
            p_floor,
            priority_sum: 0.0,
            pushes_since_recompute: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn p_floor(&self) -> f64 {
        self.p_floor
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, mut entry: ReplayEntry) {
        entry.priority = entry.priority.max(self.p_floor);
        if self.entries.len() == self.capacity {
            if let Some(old) = self.entries.pop_front() {
                self.priority_sum -= old.priority;
            }
        }
        self.priority_sum += entry.priority;
        self.entries.push_back(entry);
        self.pushes_since_recompute += 1;
        // The float drift bound on the running sum is kept tight by
        // periodic recomputation.
        if self.pushes_since_recompute >= 10_000 {
            self.recompute_priority_sum();
        }
    }

    /// Drop entries older than `k_age` epochs relative to `current_epoch`.
    pub fn evict_older_than(&mut self, current_epoch: usize, k_age: usize) {
        let cutoff = current_epoch.saturating_sub(k_age);
        let before = self.entries.len();
        self.entries.retain(|e| e.epoch_id >= cutoff);
        if self.entries.len() != before {
            self.recompute_priority_sum();
        }
    }

    /// Reassign every entry's priority from the tail model.
    pub fn update_priorities(&mut self, model: &TailModel) {
        for e in self.entries.iter_mut() {
            e.priority = priority_from_parts(
                e.reward_advantage,
                e.trajectory_cost,
                model,
                self.p_floor,
            );
        }
        self.recompute_priority_sum();
    }

    pub fn priority_sum(&self) -> f64 {
        self.priority_sum
    }

    pub fn recompute_priority_sum(&mut self) {
        self.priority_sum = self.entries.iter().map(|e| e.priority).sum();
        self.pushes_since_recompute = 0;
    }
}

/// Quantile-level priority of one sample:
/// `omega_r + omega_c` floored at `p_floor`, where each omega is the GPD CDF
/// of the excess over its boundary (0 at or below the boundary).
pub fn priority(entry: &ReplayEntry, model: &TailModel, p_floor: f64) -> f64 {
    priority_from_parts(entry.reward_advantage, entry.trajectory_cost, model, p_floor)
}

fn priority_from_parts(reward_advantage: f64, cost: f64, model: &TailModel, p_floor: f64) -> f64 {
    let omega_r = if reward_advantage > model.reward_gpd.threshold {
        gpd_cdf_saturating(&model.reward_gpd, reward_advantage - model.reward_gpd.threshold)
    } else {
        0.0
    };
    let omega_c = if cost > model.cost_gpd.threshold {
        gpd_cdf_saturating(&model.cost_gpd, cost - model.cost_gpd.threshold)
    } else {
        0.0
    };
    (omega_r + omega_c).max(p_floor)
}

/// Replay distribution: priorities normalized to sum to one.
pub fn replay_probabilities(buffer: &ReplayBuffer) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(EvoError::InvalidInput("empty replay buffer".into()));
    }
    let total: f64 = buffer.entries.iter().map(|e| e.priority).sum();
    if total <= 0.0 {
        return Err(EvoError::Numerical("nonpositive priority sum".into()));
    }
    Ok(buffer.entries.iter().map(|e| e.priority / total).collect())
}

/// Draw `batch_size` entry indices with replacement according to
/// [`replay_probabilities`].
pub fn sample_batch(
    buffer: &ReplayBuffer,
    rng: &mut impl Rng,
    batch_size: usize,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(EvoError::InvalidInput("batch_size must be positive".into()));
    }
    let probs = replay_probabilities(buffer)?;
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let u: f64 = rng.gen_range(0.0..1.0);
        let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        out.push(idx.min(probs.len() - 1));
    }
    Ok(out)
}

/// Importance-reweigh a stored sample against the current policy:
/// the advantage gets the clipped single-step ratio `pi/pi_0`, the
/// trajectory cost gets either the same ratio (`Literal`) or the clipped
/// product of per-step ratios over the source trajectory (`Product`).
pub fn importance_reweigh<F>(
    entry: &ReplayEntry,
    current_log_prob: F,
    mode: RatioMode,
    clip: (f64, f64),
) -> (f64, f64)
where
    F: Fn(&[f64], &Action) -> f64,
{
    let w_step = (current_log_prob(&entry.state, &entry.action) - entry.log_prob_old)
        .exp()
        .clamp(clip.0, clip.1);
    let w_traj = match mode {
        RatioMode::Literal => w_step,
        RatioMode::Product => {
            let traj = &entry.trajectory;
            let mut log_ratio = 0.0;
            for i in 0..traj.states.len() {
                log_ratio += current_log_prob(&traj.states[i], &traj.actions[i])
                    - traj.log_probs[i];
            }
            log_ratio.exp().clamp(clip.0, clip.1)
        }
    };
    (w_step * entry.reward_advantage, w_traj * entry.trajectory_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::GpdParams;

    fn dummy_traj() -> Arc<StoredTrajectory> {
        Arc::new(StoredTrajectory {
            states: vec![vec![0.0], vec![1.0]],
            actions: vec![Action::Discrete(0), Action::Discrete(1)],
            log_probs: vec![-1.0, -2.0],
        })
    }

    fn entry(adv: f64, cost: f64, priority: f64, epoch: usize) -> ReplayEntry {
        ReplayEntry {
            state: vec![0.0],
            action: Action::Discrete(0),
            reward_advantage: adv,
            trajectory_cost: cost,
            log_prob_old: -1.0,
            epoch_id: epoch,
            priority,
            trajectory: dummy_traj(),
        }
    }

    fn model(q_r: f64, q_c: f64) -> TailModel {
        let cost = GpdParams::new(0.5, 1.0, 20, 100, q_c).unwrap();
        let reward = GpdParams::new(0.5, 1.0, 20, 100, q_r).unwrap();
        TailModel::new(cost, reward, 0.05).unwrap()
    }

    #[test]
    fn identity_reweigh_when_policies_match() {
        let e = entry(3.0, 7.0, 1.0, 0);
        let lp = |_: &[f64], a: &Action| match a {
            Action::Discrete(0) => -1.0,
            _ => -2.0,
        };
        let (a, c) = importance_reweigh(&e, lp, RatioMode::Product, RATIO_CLIP);
        assert_eq!(a, 3.0);
        assert_eq!(c, 7.0);
        let (a, c) = importance_reweigh(&e, lp, RatioMode::Literal, RATIO_CLIP);
        assert_eq!(a, 3.0);
        assert_eq!(c, 7.0);
    }

    #[test]
    fn single_step_ratio_scales_advantage() {
        let e = entry(3.0, 1.0, 1.0, 0);
        // log ratio = ln 2 at the stored step.
        let lp = |_: &[f64], _: &Action| -1.0 + 2.0f64.ln();
        let (a, _) = importance_reweigh(&e, lp, RatioMode::Literal, RATIO_CLIP);
        assert!((a - 6.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_ratio_clipped() {
        let e = entry(3.0, 1.0, 1.0, 0);
        let lp = |_: &[f64], _: &Action| -1.0 + 10.0; // ratio e^10
        let (a, _) = importance_reweigh(&e, lp, RatioMode::Literal, RATIO_CLIP);
        assert_eq!(a, 30.0); // clipped at 10 * A_R
    }

    #[test]
    fn product_mode_multiplies_per_step_ratios() {
        let e = entry(1.0, 5.0, 1.0, 0);
        // Stored log probs are [-1, -2]; new policy returns -0.5 for both
        // steps, so the product ratio is exp(0.5 + 1.5) = e^2.
        let lp = |_: &[f64], _: &Action| -0.5;
        let (_, c) = importance_reweigh(&e, lp, RatioMode::Product, RATIO_CLIP);
        assert!((c - 5.0 * 2.0f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn priority_floor_and_sum() {
        let m = model(1.0, 10.0);
        let below = entry(0.5, 5.0, 0.0, 0);
        assert_eq!(priority(&below, &m, P_FLOOR_DEFAULT), P_FLOOR_DEFAULT);
        // At a boundary the excess CDF contributes exactly 0.
        let at_boundary = entry(1.0, 10.0, 0.0, 0);
        assert_eq!(priority(&at_boundary, &m, P_FLOOR_DEFAULT), P_FLOOR_DEFAULT);
        // Far above both boundaries the two quantile levels add.
        let hot = entry(1000.0, 1000.0, 0.0, 0);
        let p = priority(&hot, &m, P_FLOOR_DEFAULT);
        assert!(p > 1.9 && p <= 2.0, "{p}");
    }

    #[test]
    fn priority_is_sum_of_quantile_levels() {
        let m = model(0.0, 0.0);
        // omega_r = 0.9, omega_c = 0.7 by inverting the CDF.
        let z_r = crate::evt::gpd_quantile(&m.reward_gpd, 0.9).unwrap();
        let z_c = crate::evt::gpd_quantile(&m.cost_gpd, 0.7).unwrap();
        let e = entry(z_r, z_c, 0.0, 0);
        let p = priority(&e, &m, P_FLOOR_DEFAULT);
        assert!((p - 1.6).abs() < 1e-10, "{p}");
    }

    #[test]
    fn priority_monotone_in_each_argument() {
        let m = model(0.0, 5.0);
        let mut prev = 0.0;
        for i in 0..50 {
            let adv = i as f64 * 0.2;
            let p = priority(&entry(adv, 0.0, 0.0, 0), &m, P_FLOOR_DEFAULT);
            assert!(p >= prev);
            prev = p;
        }
        prev = 0.0;
        for i in 0..50 {
            let c = i as f64 * 0.5;
            let p = priority(&entry(0.0, c, 0.0, 0), &m, P_FLOOR_DEFAULT);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn probabilities_normalize() {
        let mut buf = ReplayBuffer::new(10, 0.0);
        buf.push(entry(0.0, 0.0, 1.0, 0));
        buf.push(entry(0.0, 0.0, 3.0, 0));
        let p = replay_probabilities(&buf).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        let mut buf = ReplayBuffer::new(10, 0.0);
        for _ in 0..4 {
            buf.push(entry(0.0, 0.0, 0.7, 0));
        }
        let p = replay_probabilities(&buf).unwrap();
        for x in &p {
            assert!((x - 0.25).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_buffer_errors() {
        let buf = ReplayBuffer::new(10, 1e-3);
        assert!(replay_probabilities(&buf).is_err());
        let mut rng = crate::rng::substream(91, &[0]);
        assert!(sample_batch(&buf, &mut rng, 5).is_err());
    }

    #[test]
    fn zero_batch_size_errors() {
        let mut buf = ReplayBuffer::new(10, 1e-3);
        buf.push(entry(0.0, 0.0, 1.0, 0));
        let mut rng = crate::rng::substream(92, &[0]);
        assert!(sample_batch(&buf, &mut rng, 0).is_err());
    }

    #[test]
    fn single_entry_dominates() {
        let mut buf = ReplayBuffer::new(10, 1e-3);
        buf.push(entry(0.0, 0.0, 1.0, 0));
        let mut rng = crate::rng::substream(93, &[0]);
        let idx = sample_batch(&buf, &mut rng, 20).unwrap();
        assert!(idx.iter().all(|&i| i == 0));
        // With the floor disabled, one hot entry among zeros takes all draws.
        let mut buf = ReplayBuffer::new(10, 0.0);
        buf.push(entry(0.0, 0.0, 0.0, 0));
        buf.push(entry(0.0, 0.0, 1.0, 0));
        buf.push(entry(0.0, 0.0, 0.0, 0));
        let idx = sample_batch(&buf, &mut rng, 50).unwrap();
        assert!(idx.iter().all(|&i| i == 1));
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let mut buf = ReplayBuffer::new(2000, 1e-3);
        let mut rng = crate::rng::substream(94, &[0]);
        use rand::Rng;
        for i in 0..1000 {
            buf.push(entry(0.0, 0.0, rng.gen_range(0.001..2.0), i));
        }
        let probs = replay_probabilities(&buf).unwrap();
        let draws = 1_000_000usize;
        let idx = sample_batch(&buf, &mut rng, draws).unwrap();
        let mut counts = vec![0usize; probs.len()];
        for i in idx {
            counts[i] += 1;
        }
        let mut checked = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p < 1e-4 {
                continue; // too rare for a stable frequency estimate
            }
            let freq = counts[i] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (freq - p).abs() <= 4.0 * se,
                "entry {i}: freq {freq} vs p {p} (se {se})"
            );
            checked += 1;
        }
        assert!(checked > 500);
    }

    #[test]
    fn running_priority_sum_stays_consistent() {
        let mut buf = ReplayBuffer::new(100, 1e-3);
        let mut rng = crate::rng::substream(95, &[0]);
        use rand::Rng;
        for i in 0..500 {
            buf.push(entry(0.0, 0.0, rng.gen_range(0.0..3.0), i / 50));
        }
        let truth: f64 = buf.entries().map(|e| e.priority).sum();
        assert!((buf.priority_sum() - truth).abs() < 1e-9);
        buf.evict_older_than(9, 5);
        let truth: f64 = buf.entries().map(|e| e.priority).sum();
        assert!((buf.priority_sum() - truth).abs() < 1e-9);
        assert!(buf.entries().all(|e| e.epoch_id >= 4));
    }

    #[test]
    fn capacity_is_fifo() {
        let mut buf = ReplayBuffer::new(3, 1e-3);
        for i in 0..5 {
            buf.push(entry(i as f64, 0.0, 1.0, i));
        }
        assert_eq!(buf.len(), 3);
        let ages: Vec<usize> = buf.entries().map(|e| e.epoch_id).collect();
        assert_eq!(ages, vec![2, 3, 4]);
    }

    #[test]
    fn update_priorities_uses_model() {
        let m = model(0.0, 5.0);
        let mut buf = ReplayBuffer::new(10, 1e-3);
        buf.push(entry(0.0, 0.0, 0.5, 0)); // below boundaries -> floor
        buf.push(entry(10.0, 100.0, 0.5, 0)); // far above -> near 2
        buf.update_priorities(&m);
        let ps: Vec<f64> = buf.entries().map(|e| e.priority).collect();
        assert_eq!(ps[0], 1e-3);
        assert!(ps[1] > 1.9);
    }
}
