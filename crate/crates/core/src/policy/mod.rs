//! Parametric stochastic policies (categorical and diagonal Gaussian) and
//! scalar value functions over a fixed two-hidden-layer tanh network, with
//! hand-rolled reverse-mode gradients, closed-form KL, and matrix-free
//! Fisher-vector products for the trust-region solver.
//!
//! Parameter vectors are immutable values: updates return new vectors.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use net::NetDims;

use crate::cmdp::Action;
use crate::error::{EvoError, Result};
use rand::Rng;

/// Hidden width of every network in this crate (two layers of this size).
pub const HIDDEN_DIM: usize = 64;

/// Initial log standard deviation for Gaussian policies.
pub const LOG_STD_INIT: f64 = -0.6931471805599453; // ln(0.5)

/// Distribution family and action metadata of a policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    Categorical { n_actions: usize },
    Gaussian { dim: usize, low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub obs_dim: usize,
    pub head: PolicyHead,
}

impl PolicySpec {
    fn out_dim(&self) -> usize {
        match &self.head {
            PolicyHead::Categorical { n_actions } => *n_actions,
            PolicyHead::Gaussian { dim, .. } => *dim,
        }
    }

    fn dims(&self) -> NetDims {
        NetDims { input: self.obs_dim, hidden: HIDDEN_DIM, output: self.out_dim() }
    }

    /// Total parameter count: network weights plus, for Gaussian heads, the
    /// state-independent log standard deviations.
    pub fn param_len(&self) -> usize {
        let extra = match &self.head {
            PolicyHead::Categorical { .. } => 0,
            PolicyHead::Gaussian { dim, .. } => *dim,
        };
        self.dims().param_len() + extra
    }
}

/// Flat parameter vector for one policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub spec: PolicySpec,
    pub flat: Vec<f64>,
    /// Seed the parameters were initialized from (recorded in checkpoints).
    pub seed: u64,
}

impl PolicyParams {
    pub fn init(spec: PolicySpec, seed: u64) -> Self {
        let mut rng = crate::rng::substream(seed, &[0x706f_6c69]);
        let mut flat = net::init_params(&spec.dims(), &mut rng, 0.01);
        if let PolicyHead::Gaussian { dim, .. } = &spec.head {
            flat.extend(std::iter::repeat(LOG_STD_INIT).take(*dim));
        }
        Self { spec, flat, seed }
    }

    pub fn with_flat(&self, flat: Vec<f64>) -> Self {
        debug_assert_eq!(flat.len(), self.flat.len());
        Self { spec: self.spec.clone(), flat, seed: self.seed }
    }

    fn log_std(&self) -> &[f64] {
        let n = self.spec.dims().param_len();
        &self.flat[n..]
    }

    fn dist_at(&self, state: &[f64]) -> net::Activations {
        net::forward(&self.spec.dims(), &self.flat, state)
    }

    /// Log probability mass/density of `action` in `state`.
    pub fn log_prob(&self, state: &[f64], action: &Action) -> f64 {
        let acts = self.dist_at(state);
        match (&self.spec.head, action) {
            (PolicyHead::Categorical { .. }, Action::Discrete(a)) => {
                let lse = log_sum_exp(&acts.out);
                acts.out[*a] - lse
            }
            (PolicyHead::Gaussian { dim, .. }, Action::Continuous(a)) => {
                let log_std = self.log_std();
                let mut lp = 0.0;
                for j in 0..*dim {
                    let sd = log_std[j].exp();
                    let z = (a[j] - acts.out[j]) / sd;
                    lp += -0.5 * z * z - log_std[j] - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                lp
            }
            _ => f64::NEG_INFINITY,
        }
    }

    /// Draw an action. Continuous actions are clamped to the environment
    /// bounds after sampling.
    pub fn sample(&self, state: &[f64], rng: &mut impl Rng) -> Action {
        let acts = self.dist_at(state);
        match &self.spec.head {
            PolicyHead::Categorical { n_actions } => {
                let lse = log_sum_exp(&acts.out);
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut cum = 0.0;
                for a in 0..*n_actions {
                    cum += (acts.out[a] - lse).exp();
                    if u < cum {
                        return Action::Discrete(a);
                    }
                }
                Action::Discrete(n_actions - 1)
            }
            PolicyHead::Gaussian { dim, low, high } => {
                let log_std = self.log_std();
                let mut a = vec![0.0; *dim];
                for j in 0..*dim {
                    let eps = sample_standard_normal(rng);
                    a[j] = (acts.out[j] + log_std[j].exp() * eps).clamp(low[j], high[j]);
                }
                Action::Continuous(a)
            }
        }
    }

    /// Deterministic action (argmax mass / distribution mean) for evaluation.
    pub fn mode(&self, state: &[f64]) -> Action {
        let acts = self.dist_at(state);
        match &self.spec.head {
            PolicyHead::Categorical { n_actions } => {
                let mut best = 0;
                for a in 1..*n_actions {
                    if acts.out[a] > acts.out[best] {
                        best = a;
                    }
                }
                Action::Discrete(best)
            }
            PolicyHead::Gaussian { dim, low, high } => {
                let a = (0..*dim).map(|j| acts.out[j].clamp(low[j], high[j])).collect();
                Action::Continuous(a)
            }
        }
    }

    /// Gradient of `(1/N) * sum_i weights[i] * log pi(actions[i] | states[i])`
    /// with respect to the flat parameters.
    pub fn grad_weighted_log_prob(
        &self,
        states: &[Vec<f64>],
        actions: &[Action],
        weights: &[f64],
    ) -> Result<Vec<f64>> {
        if states.len() != actions.len() || states.len() != weights.len() {
            return Err(EvoError::InvalidInput("states/actions/weights length mismatch".into()));
        }
        let dims = self.spec.dims();
        let n = states.len() as f64;
        let mut grad = vec![0.0; self.flat.len()];
        let net_len = dims.param_len();
        for ((state, action), &w) in states.iter().zip(actions).zip(weights) {
            let acts = self.dist_at(state);
            match (&self.spec.head, action) {
                (PolicyHead::Categorical { n_actions }, Action::Discrete(a)) => {
                    let lse = log_sum_exp(&acts.out);
                    let mut cot = vec![0.0; *n_actions];
                    for (k, c) in cot.iter_mut().enumerate() {
                        let p = (acts.out[k] - lse).exp();
                        *c = (if k == *a { 1.0 } else { 0.0 } - p) * w / n;
                    }
                    net::backward(&dims, &self.flat, state, &acts, &cot, &mut grad);
                }
                (PolicyHead::Gaussian { dim, .. }, Action::Continuous(a)) => {
                    let log_std = self.log_std();
                    let mut cot = vec![0.0; *dim];
                    for j in 0..*dim {
                        let var = (2.0 * log_std[j]).exp();
                        cot[j] = (a[j] - acts.out[j]) / var * w / n;
                        // d logp / d log_std = z^2 - 1.
                        let z = (a[j] - acts.out[j]) / log_std[j].exp();
                        grad[net_len + j] += (z * z - 1.0) * w / n;
                    }
                    net::backward(&dims, &self.flat, state, &acts, &cot, &mut grad);
                }
                _ => return Err(EvoError::InvalidInput("action kind mismatch".into())),
            }
        }
        Ok(grad)
    }

    /// `(1/N) * sum_i exp(logpi - old_log_probs[i]) * weights[i]`: the
    /// importance-ratio surrogate evaluated by the line search.
    pub fn surrogate_mean(
        &self,
        states: &[Vec<f64>],
        actions: &[Action],
        old_log_probs: &[f64],
        weights: &[f64],
    ) -> f64 {
        let n = states.len() as f64;
        let mut total = 0.0;
        for i in 0..states.len() {
            let ratio = (self.log_prob(&states[i], &actions[i]) - old_log_probs[i]).exp();
            total += ratio * weights[i];
        }
        total / n
    }

    /// Mean KL divergence `E_s[KL(pi_theta || pi_theta_k)]` over the probed
    /// states, in closed form per distribution family.
    pub fn kl_mean(&self, old: &PolicyParams, states: &[Vec<f64>]) -> f64 {
        debug_assert_eq!(self.spec, old.spec);
        let n = states.len() as f64;
        let mut total = 0.0;
        for state in states {
            let new_acts = self.dist_at(state);
            let old_acts = old.dist_at(state);
            match &self.spec.head {
                PolicyHead::Categorical { n_actions } => {
                    let lse_new = log_sum_exp(&new_acts.out);
                    let lse_old = log_sum_exp(&old_acts.out);
                    for a in 0..*n_actions {
                        let lp_new = new_acts.out[a] - lse_new;
                        let lp_old = old_acts.out[a] - lse_old;
                        total += lp_new.exp() * (lp_new - lp_old);
                    }
                }
                PolicyHead::Gaussian { dim, .. } => {
                    let ls_new = self.log_std();
                    let ls_old = old.log_std();
                    for j in 0..*dim {
                        let var_new = (2.0 * ls_new[j]).exp();
                        let var_old = (2.0 * ls_old[j]).exp();
                        let dm = new_acts.out[j] - old_acts.out[j];
                        total +=
                            ls_old[j] - ls_new[j] + (var_new + dm * dm) / (2.0 * var_old) - 0.5;
                    }
                }
            }
        }
        total / n
    }

    /// Fisher-vector product `H v + damping * v` where `H` is the Hessian of
    /// the mean KL at these parameters, applied without materializing `H`.
    ///
    /// Computed as a forward-mode tangent through the network, the
    /// closed-form distribution Fisher, and a reverse-mode pullback; at the
    /// expansion point this equals the exact KL Hessian because the
    /// first-order KL term vanishes there.
    pub fn fisher_vector_product(
        &self,
        states: &[Vec<f64>],
        v: &[f64],
        damping: f64,
    ) -> Result<Vec<f64>> {
        if v.len() != self.flat.len() {
            return Err(EvoError::InvalidInput(format!(
                "vector length {} != parameter length {}",
                v.len(),
                self.flat.len()
            )));
        }
        let dims = self.spec.dims();
        let net_len = dims.param_len();
        let n = states.len() as f64;
        let mut result = vec![0.0; v.len()];
        for state in states {
            let acts = self.dist_at(state);
            let dout = net::jvp(&dims, &self.flat, state, &acts, &v[..net_len]);
            match &self.spec.head {
                PolicyHead::Categorical { n_actions } => {
                    // Fisher in logit space: diag(p) - p p^T.
                    let lse = log_sum_exp(&acts.out);
                    let probs: Vec<f64> =
                        (0..*n_actions).map(|a| (acts.out[a] - lse).exp()).collect();
                    let mean_d: f64 = probs.iter().zip(&dout).map(|(p, d)| p * d).sum();
                    let cot: Vec<f64> =
                        probs.iter().zip(&dout).map(|(p, d)| p * (d - mean_d) / n).collect();
                    net::backward(&dims, &self.flat, state, &acts, &cot, &mut result);
                }
                PolicyHead::Gaussian { dim, .. } => {
                    // Fisher blocks: 1/sigma^2 for means, 2 for log stds.
                    let log_std = self.log_std();
                    let mut cot = vec![0.0; *dim];
                    for j in 0..*dim {
                        let var = (2.0 * log_std[j]).exp();
                        cot[j] = dout[j] / var / n;
                        result[net_len + j] += 2.0 * v[net_len + j] / n;
                    }
                    net::backward(&dims, &self.flat, state, &acts, &cot, &mut result);
                }
            }
        }
        for (r, t) in result.iter_mut().zip(v) {
            *r += damping * t;
        }
        Ok(result)
    }
}

/// Reward-objective and constraint gradients of the trust-region surrogate
/// at the current parameters: `g = grad E[ratio * A_R]` and
/// `g_C = grad E[ratio * A_C] / (1 - gamma)`. Ratios are 1 at the expansion
/// point, so both reduce to advantage-weighted score gradients.
pub fn surrogate_gradients(
    theta_k: &PolicyParams,
    states: &[Vec<f64>],
    actions: &[Action],
    reward_advantages: &[f64],
    cost_advantages: &[f64],
    gamma: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = theta_k.grad_weighted_log_prob(states, actions, reward_advantages)?;
    let scaled: Vec<f64> = cost_advantages.iter().map(|a| a / (1.0 - gamma)).collect();
    let g_c = theta_k.grad_weighted_log_prob(states, actions, &scaled)?;
    Ok((g, g_c))
}

/// Flat parameter vector for one scalar-output value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub obs_dim: usize,
    pub flat: Vec<f64>,
    pub seed: u64,
}

impl ValueParams {
    fn dims(&self) -> NetDims {
        NetDims { input: self.obs_dim, hidden: HIDDEN_DIM, output: 1 }
    }

    pub fn init(obs_dim: usize, seed: u64) -> Self {
        let dims = NetDims { input: obs_dim, hidden: HIDDEN_DIM, output: 1 };
        let mut rng = crate::rng::substream(seed, &[0x7661_6c75]);
        let flat = net::init_params(&dims, &mut rng, 1.0);
        Self { obs_dim, flat, seed }
    }

    pub fn predict(&self, state: &[f64]) -> f64 {
        net::forward(&self.dims(), &self.flat, state).out[0]
    }

    pub fn mse(&self, states: &[Vec<f64>], targets: &[f64]) -> f64 {
        let n = states.len() as f64;
        states
            .iter()
            .zip(targets)
            .map(|(s, t)| {
                let e = self.predict(s) - t;
                e * e
            })
            .sum::<f64>()
            / n
    }

    /// Gradient of the mean-squared error against `targets`.
    pub fn mse_gradient(&self, states: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
        let dims = self.dims();
        let n = states.len() as f64;
        let mut grad = vec![0.0; self.flat.len()];
        for (s, t) in states.iter().zip(targets) {
            let acts = net::forward(&dims, &self.flat, s);
            let cot = [2.0 * (acts.out[0] - t) / n];
            net::backward(&dims, &self.flat, s, &acts, &cot, &mut grad);
        }
        grad
    }
}

/// Full-batch gradient descent on the MSE for `iterations` steps. A step
/// that increases the loss is undone and retried with a halved rate, so the
/// final MSE never exceeds the initial one.
pub fn value_update(
    params: &ValueParams,
    states: &[Vec<f64>],
    targets: &[f64],
    lr: f64,
    iterations: usize,
) -> Result<ValueParams> {
    if states.len() != targets.len() || states.is_empty() {
        return Err(EvoError::InvalidInput("states/targets length mismatch or empty".into()));
    }
    if lr <= 0.0 || iterations == 0 {
        return Err(EvoError::InvalidInput("lr must be > 0 and iterations >= 1".into()));
    }
    let mut current = params.clone();
    let mut rate = lr;
    let mut loss = current.mse(states, targets);
    for _ in 0..iterations {
        let grad = current.mse_gradient(states, targets);
        let mut accepted = false;
        for _ in 0..30 {
            let flat: Vec<f64> =
                current.flat.iter().zip(&grad).map(|(p, g)| p - rate * g).collect();
            let candidate = ValueParams { obs_dim: current.obs_dim, flat, seed: current.seed };
            let new_loss = candidate.mse(states, targets);
            if new_loss <= loss {
                current = candidate;
                loss = new_loss;
                accepted = true;
                break;
            }
            rate *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(current)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Box-Muller standard normal draw.
pub fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
