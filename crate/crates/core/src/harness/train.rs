//! The per-epoch training loop.
//!
//! Each epoch: roll out the current policy, estimate advantages and
//! per-trajectory cumulative costs, refit the value functions, importance-
//! reweigh replayed samples, fit the cost and reward tails, rebuild the risk
//! boundary and replay priorities, take one constrained trust-region policy
//! step, then adapt the exploitation range toward the cost limit.

use super::config::{Mode, TrainConfig};
use super::metrics::{write_metrics_csv, EpochMetrics, CSV_HEADER};
use super::rollout::{collect_batch, RolloutBatch};
use crate::cmdp::ProcessedBatch;
use crate::envs::{make_env, ActionKind, Environment};
use crate::error::{EvoError, Result};
use crate::evt::{
    extract_peaks, fit_gaussian, fit_gpd_mle_with, gpd_cdf_saturating, ks_statistic, normal_cdf,
    risk_boundary, GpdParams, TailModel,
};
use crate::policy::{
    save_checkpoint, surrogate_gradients, value_update, Checkpoint, PolicyHead, PolicyParams,
    PolicySpec, ValueParams,
};
use crate::replay::{
    importance_reweigh, sample_batch, ReplayBuffer, ReplayEntry, StoredTrajectory,
};
use crate::trustregion::{line_search, propose_step, LineSearchFns, StepProblem};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub struct TrainOutput {
    pub metrics: Vec<EpochMetrics>,
    pub run_dir: PathBuf,
    pub final_checkpoint: Checkpoint,
}

fn policy_spec_for(env: &dyn Environment) -> PolicySpec {
    let spec = env.spec();
    let head = match &spec.action_kind {
        ActionKind::Discrete { n } => PolicyHead::Categorical { n_actions: *n },
        ActionKind::Continuous { dim, low, high } => {
            PolicyHead::Gaussian { dim: *dim, low: low.clone(), high: high.clone() }
        }
    };
    PolicySpec { obs_dim: spec.observation_dim, head }
}

/// Empirical quantile by order statistic (ceil rule) of an unsorted slice.
fn empirical_quantile(samples: &[f64], level: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let idx = ((n as f64 * level).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Max over distinct states of |mean cost advantage|, the sample analogue of
/// the per-state advantage bound in the violation theorems.
fn eps_c_estimate(batch: &ProcessedBatch) -> f64 {
    let mut groups: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
    for (state, adv) in batch.states.iter().zip(&batch.cost_advantages) {
        let key: Vec<u64> = state.iter().map(|x| x.to_bits()).collect();
        let e = groups.entry(key).or_insert((0.0, 0));
        e.0 += adv;
        e.1 += 1;
    }
    groups
        .values()
        .map(|(sum, count)| (sum / *count as f64).abs())
        .fold(0.0, f64::max)
}

struct TailFits {
    cost: Option<GpdParams>,
    reward: Option<GpdParams>,
    cost_peaks: Vec<f64>,
    /// True when the cost fit fell back to the previous epoch's parameters.
    reused_previous: bool,
}

fn fit_tails(
    cost_samples: &[f64],
    reward_samples: &[f64],
    q_mu: f64,
    q_mu_r: f64,
    min_peaks: usize,
    prev_cost: &Option<GpdParams>,
    prev_reward: &Option<GpdParams>,
) -> TailFits {
    let cost_peaks = extract_peaks(cost_samples, q_mu);
    let n_cost = cost_samples.len();
    let mut reused_previous = false;
    let cost = match fit_gpd_mle_with(&cost_peaks, min_peaks) {
        Ok(fit) => Some(GpdParams { threshold: q_mu, n_total: n_cost, ..fit }),
        Err(_) => {
            let fallback = prev_cost.as_ref().map(|p| GpdParams { threshold: q_mu, ..p.clone() });
            reused_previous = fallback.is_some();
            fallback
        }
    };

    let reward_peaks = extract_peaks(reward_samples, q_mu_r);
    let n_reward = reward_samples.len();
    let reward = match fit_gpd_mle_with(&reward_peaks, min_peaks) {
        Ok(fit) => Some(GpdParams {
            threshold: q_mu_r,
            n_total: n_reward,
            ..fit
        }),
        Err(_) => prev_reward.as_ref().map(|p| GpdParams { threshold: q_mu_r, ..p.clone() }),
    };
    TailFits { cost, reward, cost_peaks, reused_previous }
}

/// One constrained trust-region policy update on the processed batch.
/// `c` is the constraint slack fed to the solver. Exposed for the ablation
/// equivalence tests.
pub fn policy_step(
    theta_k: &PolicyParams,
    batch: &ProcessedBatch,
    c: f64,
    config: &TrainConfig,
) -> Result<PolicyParams> {
    let (g, g_c) = surrogate_gradients(
        theta_k,
        &batch.states,
        &batch.actions,
        &batch.reward_advantages,
        &batch.cost_advantages,
        config.gamma,
    )?;
    let hvp = |v: &[f64]| {
        theta_k
            .fisher_vector_product(&batch.states, v, config.damping)
            .expect("fvp dimension checked above")
    };
    let problem = StepProblem {
        g,
        g_c,
        hvp: &hvp,
        c,
        delta: config.delta,
        cg_iters: config.cg_iters,
        cg_tol: config.cg_tol,
    };
    let step = propose_step(&problem)?;

    let scaled_cost_adv: Vec<f64> =
        batch.cost_advantages.iter().map(|a| a / (1.0 - config.gamma)).collect();
    let base_reward =
        crate::cmdp::mean(&batch.reward_advantages);
    let base_cost = crate::cmdp::mean(&scaled_cost_adv);
    let kl = |flat: &[f64]| theta_k.with_flat(flat.to_vec()).kl_mean(theta_k, &batch.states);
    let reward_improvement = |flat: &[f64]| {
        theta_k.with_flat(flat.to_vec()).surrogate_mean(
            &batch.states,
            &batch.actions,
            &batch.log_probs,
            &batch.reward_advantages,
        ) - base_reward
    };
    let constraint_decrease = |flat: &[f64]| {
        base_cost
            - theta_k.with_flat(flat.to_vec()).surrogate_mean(
                &batch.states,
                &batch.actions,
                &batch.log_probs,
                &scaled_cost_adv,
            )
    };
    let fns = LineSearchFns {
        kl: &kl,
        reward_improvement: &reward_improvement,
        constraint_decrease: &constraint_decrease,
    };
    let new_flat = line_search(&theta_k.flat, &step, config.delta, &fns);
    Ok(theta_k.with_flat(new_flat))
}

pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut env = make_env(&config.env_id, config.seed, config.shaping_weight)?;
    let max_episode_len = config
        .max_episode_len
        .unwrap_or(env.spec().max_episode_len)
        .min(env.spec().max_episode_len);
    let policy_spec = policy_spec_for(env.as_ref());
    let obs_dim = env.spec().observation_dim;
    let mut policy = PolicyParams::init(policy_spec, config.seed);
    let mut reward_value = ValueParams::init(obs_dim, config.seed.wrapping_add(1));
    let mut cost_value = ValueParams::init(obs_dim, config.seed.wrapping_add(2));
    let mut buffer = ReplayBuffer::new(config.replay_capacity, config.p_floor);
    let mut nu = if config.mode == Mode::CpoAblation { 0.0 } else { config.nu_init };
    let mut prev_cost_gpd: Option<GpdParams> = None;
    let mut prev_reward_gpd: Option<GpdParams> = None;

    let run_dir = Path::new(&config.runs_dir).join(config.effective_run_name());
    std::fs::create_dir_all(run_dir.join("checkpoints"))?;
    std::fs::write(run_dir.join("config.txt"), config.snapshot())?;

    let epochs = config.total_steps / config.epoch_batch_steps;
    let mut metrics: Vec<EpochMetrics> = Vec::with_capacity(epochs);
    let mut timing_csv = String::from("epoch,wall_time\n");
    std::fs::write(run_dir.join("metrics.csv"), format!("{CSV_HEADER}\n"))?;
    std::fs::write(run_dir.join("timing.csv"), &timing_csv)?;

    for epoch in 0..epochs {
        let t0 = Instant::now();
        let step_result = run_epoch(
            config,
            env.as_mut(),
            max_episode_len,
            epoch,
            &mut policy,
            &mut reward_value,
            &mut cost_value,
            &mut buffer,
            &mut nu,
            &mut prev_cost_gpd,
            &mut prev_reward_gpd,
        );
        let mut row = match step_result {
            Ok(row) => row,
            Err(e) => {
                return Err(EvoError::Numerical(format!("epoch {epoch}: {e}")));
            }
        };
        row.wall_time = t0.elapsed().as_secs_f64();
        eprintln!(
            "[{}] epoch {:>3}  return {:>8.3}  J_C {:>8.3}  viol {:>5.3}  nu {:.4}  risk {:>8.3}  ({:.2}s)",
            config.effective_run_name(),
            row.epoch,
            row.mean_return,
            row.mean_cost,
            row.violation_rate,
            row.nu,
            row.risk_boundary,
            row.wall_time,
        );
        timing_csv.push_str(&format!("{},{}\n", row.epoch, row.wall_time));
        metrics.push(row);
        std::fs::write(run_dir.join("metrics.csv"), write_metrics_csv(&metrics))?;
        std::fs::write(run_dir.join("timing.csv"), &timing_csv)?;

        if (epoch + 1) % config.checkpoint_every.max(1) == 0 {
            let ckpt = Checkpoint {
                env_id: config.env_id.clone(),
                cost_limit: config.cost_limit,
                policy: policy.clone(),
                reward_value: reward_value.clone(),
                cost_value: cost_value.clone(),
            };
            save_checkpoint(
                &run_dir.join("checkpoints").join(format!("epoch_{:04}.ckpt", epoch + 1)),
                &ckpt,
            )?;
        }
    }

    let final_checkpoint = Checkpoint {
        env_id: config.env_id.clone(),
        cost_limit: config.cost_limit,
        policy,
        reward_value,
        cost_value,
    };
    save_checkpoint(&run_dir.join("checkpoints").join("final.ckpt"), &final_checkpoint)?;
    Ok(TrainOutput { metrics, run_dir, final_checkpoint })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    config: &TrainConfig,
    env: &mut dyn Environment,
    max_episode_len: usize,
    epoch: usize,
    policy: &mut PolicyParams,
    reward_value: &mut ValueParams,
    cost_value: &mut ValueParams,
    buffer: &mut ReplayBuffer,
    nu: &mut f64,
    prev_cost_gpd: &mut Option<GpdParams>,
    prev_reward_gpd: &mut Option<GpdParams>,
) -> Result<EpochMetrics> {
    // Lines 2-3: rollout and advantage estimation with the pre-update values.
    let rollout = collect_batch(
        env,
        policy,
        config.epoch_batch_steps,
        max_episode_len,
        config.seed,
        epoch,
    )?;
    let batch = process_rollout(&rollout, reward_value, cost_value, config)?;

    // Lines 4-6: K value-function iterations against the GAE return targets.
    *reward_value = value_update(
        reward_value,
        &batch.states,
        &batch.reward_returns,
        config.value_lr,
        config.value_iters,
    )?;
    *cost_value = value_update(
        cost_value,
        &batch.states,
        &batch.cost_returns,
        config.value_lr,
        config.value_iters,
    )?;

    // Line 7: importance resampling of stored off-policy samples.
    buffer.evict_older_than(epoch, config.k_age);
    let j_c = batch.mean_cumulative_cost();
    let q_mu = j_c; // safety boundary = expectation of the cumulative cost
    let q_mu_r = crate::cmdp::mean(&batch.reward_advantages);

    let mut cost_samples: Vec<f64> = batch.cumulative_costs.clone();
    let mut reward_samples: Vec<f64> = batch.reward_advantages.clone();
    if config.mode != Mode::NoOffpolicyAblation && !buffer.is_empty() {
        let frac = config.offpolicy_fraction;
        let n_cost_aug = ((batch.cumulative_costs.len() as f64) * frac / (1.0 - frac)).round()
            as usize;
        let n_reward_aug =
            ((batch.reward_advantages.len() as f64) * frac / (1.0 - frac)).round() as usize;
        let clip = (config.ratio_clip_lo, config.ratio_clip_hi);
        let log_prob = |s: &[f64], a: &crate::cmdp::Action| policy.log_prob(s, a);
        let mut rng = crate::rng::substream(config.seed, &[0x5e, epoch as u64]);

        // Trajectory-level cost ratios are cached per source trajectory.
        let mut traj_cache: HashMap<usize, f64> = HashMap::new();
        if n_cost_aug > 0 {
            let idx = sample_batch(buffer, &mut rng, n_cost_aug)?;
            let entries: Vec<&ReplayEntry> = buffer.entries().collect();
            for i in idx {
                let e = entries[i];
                let key = Arc::as_ptr(&e.trajectory) as usize;
                let c_adj = if config.is_ratio_mode == crate::replay::RatioMode::Product {
                    let w = traj_cache.entry(key).or_insert_with(|| {
                        let (_, c) = importance_reweigh(e, log_prob, config.is_ratio_mode, clip);
                        c / e.trajectory_cost.max(1e-12)
                    });
                    *w * e.trajectory_cost
                } else {
                    importance_reweigh(e, log_prob, config.is_ratio_mode, clip).1
                };
                cost_samples.push(c_adj);
            }
        }
        if n_reward_aug > 0 {
            let idx = sample_batch(buffer, &mut rng, n_reward_aug)?;
            let entries: Vec<&ReplayEntry> = buffer.entries().collect();
            for i in idx {
                let e = entries[i];
                let ratio = (policy.log_prob(&e.state, &e.action) - e.log_prob_old)
                    .exp()
                    .clamp(clip.0, clip.1);
                reward_samples.push(ratio * e.reward_advantage);
            }
        }
    }

    // Lines 8-10: fit the cost tail, rebuild the risk boundary, fit the
    // reward tail.
    let fits = fit_tails(
        &cost_samples,
        &reward_samples,
        q_mu,
        q_mu_r,
        config.min_peaks,
        prev_cost_gpd,
        prev_reward_gpd,
    );
    if fits.reused_previous {
        eprintln!(
            "[{}] epoch {epoch}: too few cost peaks, reusing previous tail fit",
            config.effective_run_name()
        );
    }
    *prev_cost_gpd = fits.cost.clone().or_else(|| prev_cost_gpd.clone());
    *prev_reward_gpd = fits.reward.clone().or_else(|| prev_reward_gpd.clone());

    let tail_model = match (&fits.cost, &fits.reward) {
        (Some(c), Some(r)) => {
            let mu_hat = c.mu_hat();
            let capped_nu = nu.min((1.0 - mu_hat - 1e-3).max(0.0));
            Some(TailModel::new(c.clone(), r.clone(), capped_nu)?)
        }
        _ => None,
    };

    // Constraint slack for the policy update (the quantile term is what
    // distinguishes the modes).
    let effective_nu = match config.mode {
        Mode::CpoAblation => 0.0,
        _ => tail_model.as_ref().map(|m| m.nu).unwrap_or(0.0),
    };
    let q_term = match config.mode {
        Mode::CpoAblation => 0.0,
        Mode::ConstantQuantileAblation => {
            let mu_hat = {
                let peaks = fits.cost_peaks.len();
                1.0 - peaks as f64 / cost_samples.len() as f64
            };
            let level = (mu_hat + effective_nu).min(1.0 - 1e-9);
            empirical_quantile(&cost_samples, level) - q_mu
        }
        _ => match &tail_model {
            Some(model) => risk_boundary(model)? - q_mu,
            None => 0.0,
        },
    };
    let risk_boundary_value = q_mu + q_term;
    let c_slack = j_c + q_term - config.cost_limit;
    debug_assert!(
        (c_slack - (risk_boundary_value - config.cost_limit)).abs() < 1e-9,
        "constraint slack must be reproducible from logged fields"
    );

    // Line 11: refresh extreme priorities (skipped by the ablation so
    // replay sampling stays uniform at the floor).
    push_new_entries(buffer, &rollout, &batch, epoch);
    if config.mode != Mode::NoPrioritizationAblation {
        if let Some(model) = &tail_model {
            buffer.update_priorities(model);
        }
    }

    // Line 12: constrained trust-region update on the on-policy samples.
    *policy = policy_step(policy, &batch, c_slack, config)?;

    // Adaptive exploitation range (driven by the batch J_C estimate).
    if config.mode != Mode::CpoAblation {
        let mu_hat_for_cap = tail_model.as_ref().map(|m| m.mu_hat).unwrap_or(0.0);
        *nu = crate::trustregion::adapt_nu(
            *nu,
            j_c,
            config.cost_limit,
            config.alpha_nu,
            mu_hat_for_cap,
        );
    }

    // Diagnostics.
    let violation_rate = batch
        .cumulative_costs
        .iter()
        .filter(|&&c| c > config.cost_limit)
        .count() as f64
        / batch.cumulative_costs.len() as f64;
    let mean_return = crate::cmdp::mean(&rollout.episode_returns);
    let (xi, sigma, mu_hat, nu0, prob_bound, ks_gpd, ks_gauss) = match &fits.cost {
        Some(gpd) => {
            let eps_c = eps_c_estimate(&batch);
            let tv = crate::trustregion::tv_term_estimate(eps_c, config.gamma, config.delta);
            let nu0 = crate::trustregion::compute_nu0(gpd, tv, config.gamma);
            let mean_adv_c = crate::cmdp::mean(&batch.cost_advantages);
            let j_terms = gpd.xi / gpd.sigma * (j_c + mean_adv_c / (1.0 - config.gamma)) + 1.0;
            let e_term = gpd.xi * tv / (gpd.sigma * (1.0 - config.gamma));
            let prob_bound = if e_term >= 0.0 {
                crate::trustregion::violation_prob_bound(gpd, j_terms, e_term)
                    .unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            let (ks_gpd, ks_gauss) = if fits.cost_peaks.len() >= 2 {
                let kg = ks_statistic(&fits.cost_peaks, |z| gpd_cdf_saturating(gpd, z))
                    .unwrap_or(f64::NAN);
                let (m, s) = fit_gaussian(&fits.cost_peaks)?;
                let kn = ks_statistic(&fits.cost_peaks, |z| normal_cdf(z, m, s))
                    .unwrap_or(f64::NAN);
                (kg, kn)
            } else {
                (f64::NAN, f64::NAN)
            };
            (gpd.xi, gpd.sigma, gpd.mu_hat(), nu0, prob_bound, ks_gpd, ks_gauss)
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };

    Ok(EpochMetrics {
        epoch,
        mean_return,
        mean_cost: j_c,
        violation_rate,
        nu: effective_nu,
        mu_hat,
        xi,
        sigma,
        risk_boundary: risk_boundary_value,
        nu0,
        prob_bound,
        ks_gpd,
        ks_gauss,
        wall_time: 0.0,
    })
}

fn process_rollout(
    rollout: &RolloutBatch,
    reward_value: &ValueParams,
    cost_value: &ValueParams,
    config: &TrainConfig,
) -> Result<ProcessedBatch> {
    let mut reward_values = Vec::with_capacity(rollout.trajectories.len());
    let mut cost_values = Vec::with_capacity(rollout.trajectories.len());
    for (traj, final_obs) in rollout.trajectories.iter().zip(&rollout.final_observations) {
        let mut rv: Vec<f64> = traj.steps().iter().map(|s| reward_value.predict(&s.state)).collect();
        let mut cv: Vec<f64> = traj.steps().iter().map(|s| cost_value.predict(&s.state)).collect();
        // Terminal bootstrap: 0 when the episode ended, the value prediction
        // when it was truncated.
        if traj.terminated() {
            rv.push(0.0);
            cv.push(0.0);
        } else {
            rv.push(reward_value.predict(final_obs));
            cv.push(cost_value.predict(final_obs));
        }
        reward_values.push(rv);
        cost_values.push(cv);
    }
    ProcessedBatch::from_trajectories(
        &rollout.trajectories,
        &reward_values,
        &cost_values,
        config.gamma,
        config.gae_lambda,
    )
}

fn push_new_entries(
    buffer: &mut ReplayBuffer,
    rollout: &RolloutBatch,
    batch: &ProcessedBatch,
    epoch: usize,
) {
    let stored: Vec<Arc<StoredTrajectory>> = rollout
        .trajectories
        .iter()
        .map(|t| {
            Arc::new(StoredTrajectory {
                states: t.steps().iter().map(|s| s.state.clone()).collect(),
                actions: t.steps().iter().map(|s| s.action.clone()).collect(),
                log_probs: t.steps().iter().map(|s| s.log_prob).collect(),
            })
        })
        .collect();
    for i in 0..batch.len() {
        let ti = batch.traj_index[i];
        buffer.push(ReplayEntry {
            state: batch.states[i].clone(),
            action: batch.actions[i].clone(),
            reward_advantage: batch.reward_advantages[i],
            trajectory_cost: batch.cumulative_costs[ti],
            log_prob_old: batch.log_probs[i],
            epoch_id: epoch,
            priority: buffer.p_floor(),
            trajectory: stored[ti].clone(),
        });
    }
}

/// Training-time evaluation metric balancing return against violations:
/// `mean_return / (violation_rate + eps_stability)`.
pub fn ratio_metric(mean_return: f64, violation_rate: f64, eps_stability: f64) -> f64 {
    mean_return / (violation_rate + eps_stability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::gpd_quantile;

    fn tiny_config(dir: &Path, mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            env_id: "hazard-grid".into(),
            seed,
            total_steps: 1500,
            epoch_batch_steps: 300,
            value_iters: 3,
            max_episode_len: Some(60),
            // Few trajectories per tiny epoch; let the tail fit engage early.
            min_peaks: 3,
            mode,
            runs_dir: dir.to_string_lossy().into_owned(),
            run_name: Some(format!("t_{}_{}", mode, seed)),
            checkpoint_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_length_training_is_empty_not_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            total_steps: 100,
            epoch_batch_steps: 400,
            runs_dir: dir.path().to_string_lossy().into_owned(),
            run_name: Some("empty".into()),
            ..TrainConfig::default()
        };
        let out = train(&cfg).unwrap();
        assert!(out.metrics.is_empty());
        let csv = std::fs::read_to_string(out.run_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1); // header only
    }

    #[test]
    fn short_training_runs_and_logs_every_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), Mode::Evo, 3);
        let out = train(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 5);
        let csv = std::fs::read_to_string(out.run_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(out.run_dir.join("checkpoints/final.ckpt").exists());
        assert!(out.run_dir.join("checkpoints/epoch_0002.ckpt").exists());
        assert!(out.run_dir.join("config.txt").exists());
        for m in &out.metrics {
            assert!((0.0..=1.0).contains(&m.violation_rate));
            assert!(m.mean_cost >= 0.0);
        }
    }

    #[test]
    fn identical_configs_produce_byte_identical_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = tiny_config(dir.path(), Mode::Evo, 7);
        a.run_name = Some("det_a".into());
        let mut b = tiny_config(dir.path(), Mode::Evo, 7);
        b.run_name = Some("det_b".into());
        let out_a = train(&a).unwrap();
        let out_b = train(&b).unwrap();
        let csv_a = std::fs::read(out_a.run_dir.join("metrics.csv")).unwrap();
        let csv_b = std::fs::read(out_b.run_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn constraint_slack_reproducible_from_logged_fields() {
        // c = J_C + (risk_boundary - q_mu) - d with q_mu = J_C, so the CSV
        // fields reproduce the solver input exactly; the run asserts the
        // identity internally (debug_assert) and we re-check here.
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), Mode::Evo, 5);
        let out = train(&cfg).unwrap();
        for m in &out.metrics {
            let c = m.mean_cost + (m.risk_boundary - m.mean_cost) - cfg.cost_limit;
            assert!((c - (m.risk_boundary - cfg.cost_limit)).abs() < 1e-9);
        }
    }

    #[test]
    fn cpo_ablation_matches_reference_cpo_step_bitwise() {
        // The cpo-ablation path feeds the solver c = J_C - d with no
        // quantile term; a reference CPO update on the same batch is the
        // same computation, bit for bit.
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), Mode::CpoAblation, 11);
        let mut env = make_env(&cfg.env_id, cfg.seed, cfg.shaping_weight).unwrap();
        let policy = PolicyParams::init(policy_spec_for(env.as_ref()), cfg.seed);
        let reward_value = ValueParams::init(env.spec().observation_dim, cfg.seed + 1);
        let cost_value = ValueParams::init(env.spec().observation_dim, cfg.seed + 2);
        let rollout =
            collect_batch(env.as_mut(), &policy, cfg.epoch_batch_steps, 60, cfg.seed, 0).unwrap();
        let batch = process_rollout(&rollout, &reward_value, &cost_value, &cfg).unwrap();
        let j_c = batch.mean_cumulative_cost();
        // Reference CPO slack vs the ablation slack (quantile term disabled).
        let c_ref = j_c - cfg.cost_limit;
        let via_ablation = policy_step(&policy, &batch, c_ref, &cfg).unwrap();
        let via_reference = policy_step(&policy, &batch, j_c + 0.0 - cfg.cost_limit, &cfg).unwrap();
        let a: Vec<u64> = via_ablation.flat.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = via_reference.flat.iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        // And the disabled quantile term is exactly zero through the GPD
        // quantile at level 0.
        let gpd = GpdParams::new(0.4, 2.0, 10, 50, j_c).unwrap();
        assert_eq!(gpd_quantile(&gpd, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ablation_modes_change_the_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let base = train(&tiny_config(dir.path(), Mode::Evo, 13)).unwrap();
        for mode in [
            Mode::ConstantQuantileAblation,
            Mode::NoPrioritizationAblation,
            Mode::NoOffpolicyAblation,
        ] {
            let out = train(&tiny_config(dir.path(), mode, 13)).unwrap();
            let a = std::fs::read(base.run_dir.join("metrics.csv")).unwrap();
            let b = std::fs::read(out.run_dir.join("metrics.csv")).unwrap();
            assert_ne!(a, b, "{mode} indistinguishable from evo");
        }
    }

    #[test]
    fn ratio_metric_values() {
        assert_eq!(ratio_metric(10.0, 0.0, 0.01), 1000.0);
        assert_eq!(ratio_metric(0.0, 0.37, 0.01), 0.0);
        assert!((ratio_metric(5.0, 0.5, 0.01) - 9.803921568627452).abs() < 1e-12);
    }

    #[test]
    fn empirical_quantile_order_statistics() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&xs, 0.0), 1.0);
        assert_eq!(empirical_quantile(&xs, 0.5), 2.0);
        assert_eq!(empirical_quantile(&xs, 0.75), 3.0);
        assert_eq!(empirical_quantile(&xs, 1.0), 4.0);
    }

    #[test]
    fn eps_c_groups_identical_states() {
        let batch = ProcessedBatch {
            states: vec![vec![1.0], vec![1.0], vec![2.0]],
            actions: vec![
                crate::cmdp::Action::Discrete(0),
                crate::cmdp::Action::Discrete(1),
                crate::cmdp::Action::Discrete(0),
            ],
            log_probs: vec![0.0; 3],
            reward_advantages: vec![0.0; 3],
            cost_advantages: vec![1.0, -3.0, 0.5],
            reward_returns: vec![0.0; 3],
            cost_returns: vec![0.0; 3],
            cumulative_costs: vec![0.0],
            traj_index: vec![0, 0, 0],
            gamma: 0.99,
            gae_lambda: 0.95,
        };
        // Groups: state [1.0] has mean (1-3)/2 = -1, state [2.0] has 0.5.
        assert_eq!(eps_c_estimate(&batch), 1.0);
    }
}
