//! Constrained trust-region step: conjugate-gradient solves against the KL
//! Hessian, the analytic dual of the linearized subproblem, the recovery
//! step for infeasible iterates, backtracking line search, the adaptive
//! exploitation-range update, and calculators for the tail-model bounds.
//!
//! Symbol note: the dual multiplier of the linearized cost constraint is
//! called `nu_dual` everywhere in this module. It is unrelated to the
//! exploitation range `nu` that widens the quantile constraint; the two
//! concepts just happen to share a letter in common notation.
//!
//! The subproblem solved here, in step coordinates `x = theta - theta_k`:
//!
//! ```text
//!   maximize    g . x
//!   subject to  c + g_C . x <= 0
//!               (1/2) x' H x <= delta
//! ```

use crate::error::{EvoError, Result};
use crate::evt::GpdParams;

/// One linearized constrained step problem.
pub struct StepProblem<'a> {
    /// Reward-surrogate gradient.
    pub g: Vec<f64>,
    /// Constraint-surrogate gradient.
    pub g_c: Vec<f64>,
    /// Damped KL-Hessian-vector product.
    pub hvp: &'a dyn Fn(&[f64]) -> Vec<f64>,
    /// Constraint slack at the current iterate (J_C + quantile term - d).
    pub c: f64,
    /// Trust-region size.
    pub delta: f64,
    /// CG iteration cap and residual tolerance.
    pub cg_iters: usize,
    pub cg_tol: f64,
}

/// Analytic solution of the dual problem.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda_star: f64,
    /// Multiplier of the linearized cost constraint (`max{0, .}` rule).
    pub nu_dual_star: f64,
    /// `g' H^-1 g`.
    pub q: f64,
    /// `g' H^-1 g_C`.
    pub u: f64,
    /// `g_C' H^-1 g_C`.
    pub v: f64,
    /// CG solves reused by the step construction.
    pub h_inv_g: Vec<f64>,
    pub h_inv_g_c: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for `H x = b` with a positive-definite operator.
/// Stops when the residual norm drops below `tol * ||b||` or after `iters`.
pub fn conjugate_gradient(
    hvp: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let b_norm = rs.sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    for _ in 0..iters {
        if rs.sqrt() <= tol * b_norm {
            break;
        }
        let hp = hvp(&p);
        let php = dot(&p, &hp);
        if !php.is_finite() || php <= 0.0 {
            return Err(EvoError::Numerical(format!("CG curvature p'Hp = {php}")));
        }
        let alpha = rs / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(EvoError::Numerical("CG residual not finite".into()));
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(x)
}

/// Dual objective of the subproblem (to be maximized over lambda > 0,
/// nu_dual >= 0):
///
/// ```text
///   -(1/(2 lambda)) (q - 2 u nu + v nu^2) + nu c - lambda delta
/// ```
pub fn dual_objective(lambda: f64, nu_dual: f64, q: f64, u: f64, v: f64, c: f64, delta: f64) -> f64 {
    -(q - 2.0 * u * nu_dual + v * nu_dual * nu_dual) / (2.0 * lambda) + nu_dual * c
        - lambda * delta
}

const LAMBDA_FLOOR: f64 = 1e-8;

/// Solve the dual analytically.
///
/// For fixed lambda the optimum over the constraint multiplier is
/// `nu_dual(lambda) = max{0, (u + lambda c) / v}`; substituting splits the
/// lambda axis into an active branch (`lambda c > -u`) and an inactive one.
/// Each branch has a closed-form maximizer which is projected onto its
/// region; ties on the boundary go to the inactive branch.
pub fn solve_dual(problem: &StepProblem) -> Result<DualSolution> {
    let h_inv_g = conjugate_gradient(problem.hvp, &problem.g, problem.cg_iters, problem.cg_tol)?;
    let h_inv_g_c =
        conjugate_gradient(problem.hvp, &problem.g_c, problem.cg_iters, problem.cg_tol)?;
    let q = dot(&problem.g, &h_inv_g).max(0.0);
    let u = dot(&problem.g, &h_inv_g_c);
    let v = dot(&problem.g_c, &h_inv_g_c).max(0.0);
    let c = problem.c;
    let delta = problem.delta;

    if v <= 1e-12 {
        // No usable constraint direction. Infeasible iterates cannot be
        // recovered; feasible ones take the pure natural-gradient step.
        if c > 0.0 {
            return Err(EvoError::CannotRecover);
        }
        let lambda = (q / (2.0 * delta)).sqrt().max(LAMBDA_FLOOR);
        return Ok(DualSolution {
            lambda_star: lambda,
            nu_dual_star: 0.0,
            q,
            u,
            v,
            h_inv_g,
            h_inv_g_c,
        });
    }

    let c_sq_over_v = c * c / v;
    if c > 0.0 && c_sq_over_v > delta {
        return Err(EvoError::RecoveryNeeded { c, c_sq_over_v, delta });
    }

    // Branch A: constraint multiplier active, nu_dual = (u + lambda c)/v > 0.
    // Substituting gives  -A/(2 lambda) - (lambda/2) B + u c / v  with
    // A = q - u^2/v >= 0 (Cauchy-Schwarz) and B = 2 delta - c^2/v.
    let a_term = (q - u * u / v).max(0.0);
    let b_term = 2.0 * delta - c_sq_over_v;
    // Region bounds for lambda in branch A: lambda c > -u.
    let eval_a = |lambda: f64| -a_term / (2.0 * lambda) - 0.5 * lambda * b_term + u * c / v;
    let eval_b = |lambda: f64| -q / (2.0 * lambda) - lambda * delta;

    let mut best: Option<(f64, f64, f64)> = None; // (value, lambda, nu_dual)
    let mut consider = |value: f64, lambda: f64, nu_dual: f64| {
        if value.is_finite() && best.map_or(true, |(bv, _, _)| value > bv) {
            best = Some((value, lambda, nu_dual));
        }
    };

    // Branch B (nu_dual = 0): maximizer of -q/(2l) - l delta.
    let lambda_b = (q / (2.0 * delta)).sqrt().max(LAMBDA_FLOOR);
    // Project onto region B: lambda c <= -u.
    let lambda_b_proj = project_b(lambda_b, u, c);
    if let Some(lb) = lambda_b_proj {
        consider(eval_b(lb), lb, 0.0);
    }

    // Branch A: maximizer sqrt(A/B) projected onto lambda c > -u.
    if b_term > 0.0 {
        let lambda_a = (a_term / b_term).sqrt().max(LAMBDA_FLOOR);
        if let Some(la) = project_a(lambda_a, u, c) {
            let nu = ((u + la * c) / v).max(0.0);
            consider(eval_a(la), la, nu);
        }
    } else {
        // B <= 0: branch A value grows with lambda; only the region boundary
        // can compete, approached from inside branch A.
        if let Some(la) = project_a(f64::INFINITY, u, c) {
            if la.is_finite() {
                let nu = ((u + la * c) / v).max(0.0);
                consider(eval_a(la), la, nu);
            }
        }
    }

    let (_, lambda_star, nu_dual_star) = best.ok_or_else(|| {
        EvoError::Numerical("dual has no admissible branch point".into())
    })?;
    Ok(DualSolution {
        lambda_star: lambda_star.max(LAMBDA_FLOOR),
        nu_dual_star,
        q,
        u,
        v,
        h_inv_g,
        h_inv_g_c,
    })
}

/// Project a candidate lambda onto branch A's region {lambda >= 0 : lambda c > -u}.
fn project_a(lambda: f64, u: f64, c: f64) -> Option<f64> {
    let boundary = -u / c; // lambda where lambda c = -u
    if c > 0.0 {
        // Region is (boundary, inf) when u < 0, else all lambda >= 0.
        let lo = if u < 0.0 { boundary } else { 0.0 };
        Some(lambda.max(lo + lo.abs().max(1.0) * 1e-12).max(LAMBDA_FLOOR))
    } else if c < 0.0 {
        // Region is [0, boundary) when u > 0, else empty.
        if u <= 0.0 {
            None
        } else {
            let hi = boundary * (1.0 - 1e-12);
            Some(lambda.min(hi).max(LAMBDA_FLOOR))
        }
    } else {
        // c = 0: region is all lambda if u > 0, else empty (ties go to B).
        if u > 0.0 {
            Some(lambda.max(LAMBDA_FLOOR))
        } else {
            None
        }
    }
}

/// Project a candidate lambda onto branch B's region {lambda >= 0 : lambda c <= -u}.
fn project_b(lambda: f64, u: f64, c: f64) -> Option<f64> {
    let boundary = -u / c;
    if c > 0.0 {
        if u < 0.0 {
            Some(lambda.min(boundary).max(LAMBDA_FLOOR))
        } else if u == 0.0 {
            // Only lambda = 0 satisfies strictly; treat as boundary tie.
            Some(LAMBDA_FLOOR)
        } else {
            None
        }
    } else if c < 0.0 {
        let lo = if u > 0.0 { boundary } else { 0.0 };
        Some(lambda.max(lo).max(LAMBDA_FLOOR))
    } else {
        // c = 0: region is u <= 0 entirely, else empty.
        if u <= 0.0 {
            Some(lambda.max(LAMBDA_FLOOR))
        } else {
            None
        }
    }
}

/// Whether the solver chose the feasible path or the recovery path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Feasible,
    Recovery,
}

/// Proposed parameter step.
#[derive(Debug, Clone)]
pub struct ProposedStep {
    pub direction: Vec<f64>,
    pub kind: StepKind,
    pub dual: Option<DualSolution>,
}

/// Solve the subproblem and return the step. Feasible case:
/// `(1/lambda*) H^-1 (g - nu_dual* g_C)`; infeasible case: the recovery step
/// `-sqrt(2 delta / v) H^-1 g_C`, a pure constraint-decrease direction
/// scaled to the trust-region boundary.
pub fn propose_step(problem: &StepProblem) -> Result<ProposedStep> {
    match solve_dual(problem) {
        Ok(dual) => {
            let n = problem.g.len();
            let mut dir = vec![0.0; n];
            for i in 0..n {
                dir[i] = (dual.h_inv_g[i] - dual.nu_dual_star * dual.h_inv_g_c[i])
                    / dual.lambda_star;
            }
            Ok(ProposedStep { direction: dir, kind: StepKind::Feasible, dual: Some(dual) })
        }
        Err(EvoError::RecoveryNeeded { .. }) => {
            let h_inv_g_c =
                conjugate_gradient(problem.hvp, &problem.g_c, problem.cg_iters, problem.cg_tol)?;
            let v = dot(&problem.g_c, &h_inv_g_c);
            if v <= 1e-12 {
                return Err(EvoError::CannotRecover);
            }
            let scale = (2.0 * problem.delta / v).sqrt();
            let dir = h_inv_g_c.iter().map(|x| -scale * x).collect();
            Ok(ProposedStep { direction: dir, kind: StepKind::Recovery, dual: None })
        }
        Err(e) => Err(e),
    }
}

/// What the line search needs to evaluate at a candidate parameter vector.
pub struct LineSearchFns<'a> {
    /// Measured mean KL against the pre-step policy.
    pub kl: &'a dyn Fn(&[f64]) -> f64,
    /// Reward surrogate improvement over the pre-step policy (positive good).
    pub reward_improvement: &'a dyn Fn(&[f64]) -> f64,
    /// Constraint surrogate decrease relative to the pre-step policy
    /// (positive means the constraint got better).
    pub constraint_decrease: &'a dyn Fn(&[f64]) -> f64,
}

pub const BACKTRACK_COEFF: f64 = 0.8;
pub const BACKTRACK_STEPS: usize = 10;

/// Backtracking line search over `alpha in {1, 0.8, ..., 0.8^9}`. Accepts
/// the largest alpha whose point keeps KL within `delta` and improves the
/// reward surrogate (feasible step) or decreases the constraint surrogate
/// (recovery step). Returns the pre-step parameters if every alpha fails.
pub fn line_search(
    theta_k: &[f64],
    step: &ProposedStep,
    delta: f64,
    fns: &LineSearchFns,
) -> Vec<f64> {
    let mut alpha = 1.0;
    for _ in 0..BACKTRACK_STEPS {
        let candidate: Vec<f64> =
            theta_k.iter().zip(&step.direction).map(|(t, d)| t + alpha * d).collect();
        let kl = (fns.kl)(&candidate);
        if kl.is_finite() && kl <= delta {
            let ok = match step.kind {
                StepKind::Feasible => (fns.reward_improvement)(&candidate) > 0.0,
                StepKind::Recovery => (fns.constraint_decrease)(&candidate) > 0.0,
            };
            if ok {
                return candidate;
            }
        }
        alpha *= BACKTRACK_COEFF;
    }
    theta_k.to_vec()
}

/// Adaptive exploitation-range update: `nu <- max(0, nu + alpha (J_C - d))`,
/// additionally capped at `1 - mu_hat - 1e-3` so the quantile level stays
/// inside the fitted tail.
pub fn adapt_nu(nu: f64, j_c: f64, d: f64, alpha: f64, mu_hat: f64) -> f64 {
    let nu_max = (1.0 - mu_hat - 1e-3).max(0.0);
    (nu + alpha * (j_c - d)).max(0.0).min(nu_max)
}

/// Zero-violation exploitation range:
/// `nu0 = (N_mu/n) * (1 - (xi * tv_term / (sigma (1-gamma)) + 1)^(-1/xi))`.
///
/// `tv_term` is the estimated divergence expression
/// `E[2 gamma eps_C D_TV / (1-gamma)]`; with Pinsker's bound and the trust
/// region as KL budget it is `2 gamma eps_C sqrt(delta/2) / (1-gamma)`.
pub fn compute_nu0(gpd: &GpdParams, tv_term: f64, gamma: f64) -> f64 {
    let tail_frac = gpd.n_peaks as f64 / gpd.n_total as f64;
    let inner = gpd.xi * tv_term / (gpd.sigma * (1.0 - gamma)) + 1.0;
    tail_frac * (1.0 - inner.powf(-1.0 / gpd.xi))
}

/// Pinsker-based estimate of the divergence expression feeding
/// [`compute_nu0`] and the violation bound.
pub fn tv_term_estimate(eps_c: f64, gamma: f64, delta: f64) -> f64 {
    2.0 * gamma * eps_c * (delta / 2.0).sqrt() / (1.0 - gamma)
}

/// Violation-probability bound `(J_terms * (E_term + 1))^(-1/xi)`.
pub fn violation_prob_bound(gpd: &GpdParams, j_terms: f64, e_term: f64) -> Result<f64> {
    if j_terms <= 0.0 {
        return Err(EvoError::Domain(format!("J_terms {j_terms} must be positive")));
    }
    if e_term < 0.0 {
        return Err(EvoError::Domain(format!("E_term {e_term} must be nonnegative")));
    }
    Ok((j_terms * (e_term + 1.0)).powf(-1.0 / gpd.xi))
}

/// Asymptotic variances of the tail-quantile estimator (first) and the plain
/// sample-quantile estimator at the same overall level (second):
///
/// ```text
///   omega_evo = nu (1-mu-nu) / (N (1-mu)^2 f_H^2)
///   omega_qr  = (mu+nu)(1-mu-nu) / (N f_C^2),   f_C = (1-mu) f_H
/// ```
///
/// Their ratio is exactly `nu / (mu + nu)`.
pub fn variance_pair(mu: f64, nu: f64, n: usize, f_h_at_q: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && nu > 0.0 && mu + nu < 1.0) {
        return Err(EvoError::Domain(format!("need 0 < mu, 0 < nu, mu+nu < 1 (mu={mu}, nu={nu})")));
    }
    if n == 0 {
        return Err(EvoError::Domain("N must be >= 1".into()));
    }
    if f_h_at_q <= 0.0 {
        return Err(EvoError::Domain(format!("density {f_h_at_q} must be positive")));
    }
    let n = n as f64;
    let tail = 1.0 - mu;
    let omega_evo = nu * (1.0 - mu - nu) / (n * tail * tail * f_h_at_q * f_h_at_q);
    let f_c = tail * f_h_at_q;
    let omega_qr = (mu + nu) * (1.0 - mu - nu) / (n * f_c * f_c);
    Ok((omega_evo, omega_qr))
}
