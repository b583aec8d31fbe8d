//! Peaks-over-threshold tail modeling.
//!
//! Excesses over a high threshold are modeled with a generalized Pareto
//! distribution, CDF `1 - (1 + xi*z/sigma)^(-1/xi)` with shape `xi != 0` and
//! scale `sigma > 0`. The module provides maximum-likelihood fitting of
//! (xi, sigma), closed-form quantiles, the risk boundary reconstructed from
//! the fitted tail, and Kolmogorov-Smirnov goodness-of-fit diagnostics.

use crate::error::{EvoError, Result};

/// Minimum number of peaks required for a GPD fit.
pub const MIN_PEAKS_DEFAULT: usize = 10;

/// Search domain for the shape parameter. The exponential limit xi = 0 is
/// excluded; values inside (-XI_MIN_ABS, XI_MIN_ABS) are clamped outward.
const XI_LO: f64 = -0.9;
const XI_HI: f64 = 2.0;
const XI_MIN_ABS: f64 = 1e-3;

/// Fitted GPD parameters plus the provenance of the fit: how many samples
/// exceeded the threshold (`n_peaks`) out of how many total (`n_total`), and
/// the threshold itself (the safety boundary used to form excesses).
#[derive(Debug, Clone, PartialEq)]
pub struct GpdParams {
    pub xi: f64,
    pub sigma: f64,
    pub n_peaks: usize,
    pub n_total: usize,
    pub threshold: f64,
}

impl GpdParams {
    pub fn new(xi: f64, sigma: f64, n_peaks: usize, n_total: usize, threshold: f64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(EvoError::Domain(format!("sigma {sigma} must be positive")));
        }
        if xi == 0.0 || !xi.is_finite() {
            return Err(EvoError::Domain("xi must be finite and nonzero".into()));
        }
        if n_peaks == 0 || n_peaks > n_total {
            return Err(EvoError::Domain(format!(
                "need 0 < n_peaks ({n_peaks}) <= n_total ({n_total})"
            )));
        }
        Ok(Self { xi, sigma, n_peaks, n_total, threshold })
    }

    /// Fraction of mass below the threshold implied by the peak counts:
    /// `mu_hat = 1 - n_peaks / n_total`.
    pub fn mu_hat(&self) -> f64 {
        1.0 - self.n_peaks as f64 / self.n_total as f64
    }

    /// Upper end of the excess support: finite only for xi < 0.
    pub fn support_upper(&self) -> f64 {
        if self.xi < 0.0 {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }

    /// Density of the excess distribution at `z >= 0`.
    pub fn pdf(&self, z: f64) -> f64 {
        if z < 0.0 || z >= self.support_upper() {
            return 0.0;
        }
        let t = 1.0 + self.xi * z / self.sigma;
        (1.0 / self.sigma) * t.powf(-1.0 / self.xi - 1.0)
    }
}

/// Excesses over `threshold`: `{x - threshold : x > threshold}`.
pub fn extract_peaks(samples: &[f64], threshold: f64) -> Vec<f64> {
    samples
        .iter()
        .filter(|&&x| x > threshold)
        .map(|&x| x - threshold)
        .collect()
}

/// GPD CDF at excess `z`.
pub fn gpd_cdf(params: &GpdParams, z: f64) -> Result<f64> {
    if z < 0.0 {
        return Err(EvoError::Domain(format!("z {z} below excess support")));
    }
    if params.xi < 0.0 && z >= params.support_upper() {
        return Err(EvoError::Domain(format!(
            "z {z} outside support [0, {})",
            params.support_upper()
        )));
    }
    let t = 1.0 + params.xi * z / params.sigma;
    Ok(1.0 - t.powf(-1.0 / params.xi))
}

/// As [`gpd_cdf`] but saturating to 1 above the support (xi < 0) instead of
/// erroring; used where a quantile level is wanted for arbitrary samples.
pub fn gpd_cdf_saturating(params: &GpdParams, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if params.xi < 0.0 && z >= params.support_upper() {
        return 1.0;
    }
    let t = 1.0 + params.xi * z / params.sigma;
    (1.0 - t.powf(-1.0 / params.xi)).clamp(0.0, 1.0)
}

/// GPD quantile: `sigma/xi * ((1-p)^(-xi) - 1)` for `p` in [0,1).
pub fn gpd_quantile(params: &GpdParams, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(EvoError::Domain(format!("quantile level {p} not in [0,1)")));
    }
    Ok(params.sigma / params.xi * ((1.0 - p).powf(-params.xi) - 1.0))
}

/// GPD log-likelihood of `excesses` at (xi, sigma):
/// `-N log(sigma) - (1 + 1/xi) * sum(log(1 + xi*y/sigma))`.
/// Returns -inf outside the admissible region.
pub fn gpd_log_likelihood(excesses: &[f64], xi: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 || xi == 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    let mut sum = 0.0;
    for &y in excesses {
        let t = 1.0 + xi * y / sigma;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        sum += t.ln();
    }
    -n * sigma.ln() - (1.0 + 1.0 / xi) * sum
}

fn clamp_xi(xi: f64) -> f64 {
    let xi = xi.clamp(XI_LO, XI_HI);
    if xi.abs() < XI_MIN_ABS {
        if xi >= 0.0 {
            XI_MIN_ABS
        } else {
            -XI_MIN_ABS
        }
    } else {
        xi
    }
}

/// Golden-section maximization of `f` over [lo, hi].
fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Best sigma for a fixed xi, by golden-section over an admissible bracket.
fn best_sigma_for_xi(excesses: &[f64], xi: f64, max_excess: f64) -> (f64, f64) {
    // For xi < 0 the support constraint demands sigma > -xi * max_excess.
    let lo = if xi < 0.0 { (-xi) * max_excess * (1.0 + 1e-9) } else { 1e-9 * max_excess.max(1e-9) };
    let hi = 10.0 * max_excess;
    if lo >= hi {
        return (f64::NAN, f64::NEG_INFINITY);
    }
    // Log-space search: the likelihood is better conditioned in log(sigma).
    let (ls, ll) = golden_max(
        |ls: f64| gpd_log_likelihood(excesses, xi, ls.exp()),
        lo.ln(),
        hi.ln(),
        60,
    );
    (ls.exp(), ll)
}

/// Small Nelder-Mead maximizer in (xi, log_sigma); polishes the grid result.
fn nelder_mead_polish(
    excesses: &[f64],
    xi0: f64,
    sigma0: f64,
    max_excess: f64,
    tol: f64,
) -> (f64, f64, f64) {
    let eval = |p: &[f64; 2]| -> f64 {
        let xi = clamp_xi(p[0]);
        let sigma = p[1].exp();
        if sigma > 20.0 * max_excess {
            return f64::NEG_INFINITY;
        }
        gpd_log_likelihood(excesses, xi, sigma)
    };
    let mut simplex = [
        [xi0, sigma0.ln()],
        [xi0 + 0.05, sigma0.ln()],
        [xi0, sigma0.ln() + 0.05],
    ];
    let mut fs = [eval(&simplex[0]), eval(&simplex[1]), eval(&simplex[2])];
    for _ in 0..200 {
        // Order descending (maximization: best first).
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| fs[b].partial_cmp(&fs[a]).unwrap_or(std::cmp::Ordering::Equal));
        let (best, mid, worst) = (idx[0], idx[1], idx[2]);
        if fs[best].is_finite() && fs[worst].is_finite() && (fs[best] - fs[worst]).abs() < tol {
            break;
        }
        let centroid = [
            0.5 * (simplex[best][0] + simplex[mid][0]),
            0.5 * (simplex[best][1] + simplex[mid][1]),
        ];
        let refl = [
            centroid[0] + (centroid[0] - simplex[worst][0]),
            centroid[1] + (centroid[1] - simplex[worst][1]),
        ];
        let f_refl = eval(&refl);
        if f_refl > fs[best] {
            let expand = [
                centroid[0] + 2.0 * (centroid[0] - simplex[worst][0]),
                centroid[1] + 2.0 * (centroid[1] - simplex[worst][1]),
            ];
            let f_exp = eval(&expand);
            if f_exp > f_refl {
                simplex[worst] = expand;
                fs[worst] = f_exp;
            } else {
                simplex[worst] = refl;
                fs[worst] = f_refl;
            }
        } else if f_refl > fs[mid] {
            simplex[worst] = refl;
            fs[worst] = f_refl;
        } else {
            let contract = [
                centroid[0] + 0.5 * (simplex[worst][0] - centroid[0]),
                centroid[1] + 0.5 * (simplex[worst][1] - centroid[1]),
            ];
            let f_con = eval(&contract);
            if f_con > fs[worst] {
                simplex[worst] = contract;
                fs[worst] = f_con;
            } else {
                // Shrink toward best.
                for i in 0..3 {
                    if i != best {
                        simplex[i] = [
                            0.5 * (simplex[i][0] + simplex[best][0]),
                            0.5 * (simplex[i][1] + simplex[best][1]),
                        ];
                        fs[i] = eval(&simplex[i]);
                    }
                }
            }
        }
    }
    let mut bi = 0;
    for i in 1..3 {
        if fs[i] > fs[bi] {
            bi = i;
        }
    }
    (clamp_xi(simplex[bi][0]), simplex[bi][1].exp(), fs[bi])
}

/// Fit (xi, sigma) by maximizing the GPD log-likelihood over the excesses.
///
/// Two-stage search: a coarse grid over xi with a per-xi golden-section
/// refinement of sigma, then Nelder-Mead polish (tolerance 1e-8 in
/// log-likelihood). The exponential limit is excluded: |xi| >= 1e-3.
pub fn fit_gpd_mle(excesses: &[f64]) -> Result<GpdParams> {
    fit_gpd_mle_with(excesses, MIN_PEAKS_DEFAULT)
}

/// As [`fit_gpd_mle`] with an explicit minimum peak count.
pub fn fit_gpd_mle_with(excesses: &[f64], min_peaks: usize) -> Result<GpdParams> {
    if excesses.len() < min_peaks {
        return Err(EvoError::InsufficientData { needed: min_peaks, got: excesses.len() });
    }
    if excesses.iter().any(|&y| y <= 0.0 || !y.is_finite()) {
        return Err(EvoError::InvalidInput(
            "excesses must be strictly positive and finite".into(),
        ));
    }
    // Sort so the likelihood's summation order (and hence the optimum found)
    // does not depend on how the caller ordered the samples.
    let mut excesses = excesses.to_vec();
    excesses.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let excesses = excesses.as_slice();
    let max_excess = excesses.iter().cloned().fold(f64::MIN, f64::max);
    let min_excess = excesses.iter().cloned().fold(f64::MAX, f64::min);
    if (max_excess - min_excess) / max_excess < 1e-12 {
        return Err(EvoError::DegenerateData("all excesses identical".into()));
    }

    // Stage 1: xi grid with per-xi sigma refinement.
    let grid_n = 120;
    let mut best = (f64::NAN, f64::NAN, f64::NEG_INFINITY);
    for i in 0..=grid_n {
        let xi = clamp_xi(XI_LO + (XI_HI - XI_LO) * i as f64 / grid_n as f64);
        let (sigma, ll) = best_sigma_for_xi(excesses, xi, max_excess);
        if ll > best.2 {
            best = (xi, sigma, ll);
        }
    }
    if !best.2.is_finite() {
        return Err(EvoError::Numerical("likelihood not finite anywhere on the grid".into()));
    }

    // Stage 2: Nelder-Mead polish, then one more coordinate sweep for safety.
    let (mut xi, mut sigma, mut ll) = nelder_mead_polish(excesses, best.0, best.1, max_excess, 1e-8);
    if ll < best.2 {
        (xi, sigma, ll) = best;
    }
    let step = (XI_HI - XI_LO) / grid_n as f64;
    let (xi_ref, _) = golden_max(
        |x: f64| {
            let x = clamp_xi(x);
            best_sigma_for_xi(excesses, x, max_excess).1
        },
        (xi - step).max(XI_LO),
        (xi + step).min(XI_HI),
        40,
    );
    let xi_ref = clamp_xi(xi_ref);
    let (sigma_ref, ll_ref) = best_sigma_for_xi(excesses, xi_ref, max_excess);
    if ll_ref > ll {
        (xi, sigma, ll) = (xi_ref, sigma_ref, ll_ref);
    }
    let _ = ll;

    GpdParams::new(xi, sigma, excesses.len(), excesses.len(), 0.0)
}

/// Tail model for one epoch: cost tail, reward tail, exploitation range.
#[derive(Debug, Clone)]
pub struct TailModel {
    pub cost_gpd: GpdParams,
    pub reward_gpd: GpdParams,
    /// Exploitation range nu: tail probability mass folded into the
    /// constraint beyond the safety boundary.
    pub nu: f64,
    /// Empirical quantile level of the safety boundary, 1 - n_peaks/n_total.
    pub mu_hat: f64,
}

impl TailModel {
    pub fn new(cost_gpd: GpdParams, reward_gpd: GpdParams, nu: f64) -> Result<Self> {
        let mu_hat = cost_gpd.mu_hat();
        if !(0.0..1.0).contains(&mu_hat) {
            return Err(EvoError::Domain(format!("mu_hat {mu_hat} not in (0,1)")));
        }
        if nu < 0.0 {
            return Err(EvoError::Domain(format!("nu {nu} must be >= 0")));
        }
        if nu > 1.0 - mu_hat {
            return Err(EvoError::ExploitationRangeTooLarge {
                ratio: nu / (1.0 - mu_hat),
            });
        }
        Ok(Self { cost_gpd, reward_gpd, nu, mu_hat })
    }

    /// Safety boundary (the threshold the cost GPD was fitted over).
    pub fn safety_boundary(&self) -> f64 {
        self.cost_gpd.threshold
    }
}

/// Risk boundary: `q_mu + sigma/xi * ((1 - nu*n/N_mu)^(-xi) - 1)`, i.e. the
/// safety boundary plus the GPD quantile at level `nu*n/N_mu = nu/(1-mu_hat)`
/// (evaluated in the latter form so it shares a float path with callers
/// working in quantile levels).
pub fn risk_boundary(model: &TailModel) -> Result<f64> {
    let g = &model.cost_gpd;
    let p = model.nu / (1.0 - model.mu_hat);
    if p >= 1.0 {
        return Err(EvoError::ExploitationRangeTooLarge { ratio: p });
    }
    Ok(g.threshold + gpd_quantile(g, p)?)
}

/// Kolmogorov-Smirnov statistic of `samples` against the CDF `cdf`:
/// sup over the sorted sample of max(|i/n - F(x_i)|, |(i-1)/n - F(x_i)|).
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(EvoError::InvalidInput("empty samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = ((i + 1) as f64 / n - f).abs();
        let lo = (i as f64 / n - f).abs();
        sup = sup.max(hi).max(lo);
    }
    Ok(sup)
}

/// Sample mean and population standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(EvoError::InsufficientData { needed: 2, got: samples.len() });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Standard normal CDF via erf (Abramowitz-Stegun 7.1.26 rational
/// approximation is not accurate enough for KS comparisons; use the
/// complementary error function series on a stable branch).
pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    0.5 * erfc_impl(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

/// erfc(x): Maclaurin series of erf for moderate arguments, the classic
/// continued fraction `erfc(x) = exp(-x^2)/sqrt(pi) / (x + 1/(2x + 2/(x +
/// 3/(2x + ...))))` in the far tail. Absolute error below 1e-13.
fn erfc_impl(x: f64) -> f64 {
    let ax = x.abs();
    let val = if ax < 3.0 {
        let mut term = ax;
        let mut sum = ax;
        let x2 = ax * ax;
        for k in 1..200 {
            term *= -x2 / k as f64;
            let add = term / (2 * k + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1.0) {
                break;
            }
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        let mut cf = 0.0;
        for k in (1..=60).rev() {
            let a = k as f64 / 2.0;
            let b = if k % 2 == 1 { ax } else { 2.0 * ax };
            cf = a / (b + cf);
        }
        (-ax * ax).exp() / std::f64::consts::PI.sqrt() / (ax + cf)
    };
    if x >= 0.0 {
        val
    } else {
        2.0 - val
    }
}

/// Inverse-CDF GPD sampling (excess scale).
pub fn sample_gpd(rng: &mut impl rand::Rng, xi: f64, sigma: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            sigma / xi * ((1.0 - u).powf(-xi) - 1.0)
        })
        .collect()
}
