//! Command-line interface: training runs, checkpoint evaluation, standalone
//! tail fitting, bound calculators, and the cross-run ratio report.

use clap::{Parser, Subcommand};
use evo_core::envs::make_env;
use evo_core::error::EvoError;
use evo_core::evt::{
    extract_peaks, fit_gaussian, fit_gpd_mle, gpd_cdf_saturating, gpd_quantile, ks_statistic,
    normal_cdf, risk_boundary, GpdParams, TailModel,
};
use evo_core::harness::{
    evaluate, format_report, summarize_runs, train, TrainConfig,
};
use evo_core::policy::load_checkpoint;
use evo_core::trustregion::{compute_nu0, tv_term_estimate, variance_pair, violation_prob_bound};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "evo",
    about = "Constrained RL laboratory with extreme-value tail modeling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training session from a config file.
    Train {
        /// Flat key=value config file (# comments allowed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// key=value overrides applied after the config file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
    },
    /// Fit a generalized Pareto tail to newline-delimited samples.
    FitGpd {
        /// File of real numbers, one per line.
        #[arg(long)]
        input: PathBuf,
        /// Safety boundary: samples above it form the peak set.
        #[arg(long)]
        mu_threshold: f64,
        /// Exploitation range for the reported risk boundary.
        #[arg(long, default_value_t = 0.01)]
        nu: f64,
        /// Optional output file for the fitted parameters (key=value).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the tail-model bounds from a fitted parameter file.
    Bounds {
        /// key=value file as written by fit-gpd --out.
        #[arg(long)]
        gpd: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        /// Current expected cumulative cost.
        #[arg(long)]
        jc: f64,
        /// Constraint threshold.
        #[arg(long)]
        limit: f64,
        /// Per-state cost-advantage bound estimate.
        #[arg(long, default_value_t = 1.0)]
        eps_c: f64,
        /// Exploitation range for the variance pair (defaults to nu0).
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Tabulate the return/violation ratio across runs.
    Report {
        /// Directory holding run subdirectories.
        #[arg(long)]
        runs: PathBuf,
    },
}

fn read_samples(path: &PathBuf) -> Result<Vec<f64>, EvoError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|_| {
            EvoError::InvalidInput(format!("line {}: not a number: {line:?}", i + 1))
        })?);
    }
    Ok(out)
}

fn read_gpd_file(path: &PathBuf) -> Result<GpdParams, EvoError> {
    let text = std::fs::read_to_string(path)?;
    let mut xi = None;
    let mut sigma = None;
    let mut n_peaks = None;
    let mut n_total = None;
    let mut threshold = None;
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| EvoError::InvalidInput(format!("expected key=value: {line:?}")))?;
        let v = v.trim();
        match k.trim() {
            "xi" => xi = Some(v.parse().map_err(|_| bad(v))?),
            "sigma" => sigma = Some(v.parse().map_err(|_| bad(v))?),
            "n_peaks" => n_peaks = Some(v.parse().map_err(|_| bad(v))?),
            "n_total" => n_total = Some(v.parse().map_err(|_| bad(v))?),
            "threshold" => threshold = Some(v.parse().map_err(|_| bad(v))?),
            other => return Err(EvoError::InvalidInput(format!("unknown key {other:?}"))),
        }
    }
    fn bad(v: &str) -> EvoError {
        EvoError::InvalidInput(format!("bad number {v:?}"))
    }
    GpdParams::new(
        xi.ok_or_else(|| missing("xi"))?,
        sigma.ok_or_else(|| missing("sigma"))?,
        n_peaks.ok_or_else(|| missing("n_peaks"))?,
        n_total.ok_or_else(|| missing("n_total"))?,
        threshold.ok_or_else(|| missing("threshold"))?,
    )
}

fn missing(key: &str) -> EvoError {
    EvoError::InvalidInput(format!("missing key {key:?}"))
}

fn run() -> Result<(), EvoError> {
    match Cli::parse().command {
        Command::Train { config, overrides } => {
            let cfg = match config {
                Some(path) => TrainConfig::load(&path, &overrides)?,
                None => TrainConfig::from_overrides(&overrides)?,
            };
            let out = train(&cfg)?;
            println!("run directory: {}", out.run_dir.display());
            println!("epochs completed: {}", out.metrics.len());
            if let Some(last) = out.metrics.last() {
                println!(
                    "final epoch: return {:.4}, J_C {:.4}, violation rate {:.4}",
                    last.mean_return, last.mean_cost, last.violation_rate
                );
            }
        }
        Command::Eval { checkpoint, episodes, seed, gamma } => {
            if episodes == 0 {
                return Err(EvoError::InvalidInput("episodes must be >= 1".into()));
            }
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut env = make_env(&ckpt.env_id, seed, 1.0)?;
            let (mean_return, mean_cost, violation_rate) = evaluate(
                &ckpt.policy,
                env.as_mut(),
                episodes,
                seed,
                gamma,
                ckpt.cost_limit,
            )?;
            println!("env: {} (cost limit {})", ckpt.env_id, ckpt.cost_limit);
            println!("episodes: {episodes}");
            println!("mean return: {mean_return}");
            println!("mean cost: {mean_cost}");
            println!("violation rate: {violation_rate}");
        }
        Command::FitGpd { input, mu_threshold, nu, out } => {
            let samples = read_samples(&input)?;
            let peaks = extract_peaks(&samples, mu_threshold);
            if peaks.is_empty() {
                return Err(EvoError::InvalidInput(
                    "no samples above the threshold".into(),
                ));
            }
            let fitted = fit_gpd_mle(&peaks)?;
            let gpd = GpdParams {
                threshold: mu_threshold,
                n_total: samples.len(),
                ..fitted
            };
            let (gm, gs) = fit_gaussian(&peaks)?;
            let ks_gpd = ks_statistic(&peaks, |z| gpd_cdf_saturating(&gpd, z))?;
            let ks_gauss = ks_statistic(&peaks, |z| normal_cdf(z, gm, gs))?;
            println!("samples: {} ({} peaks above {mu_threshold})", samples.len(), peaks.len());
            println!("xi: {}", gpd.xi);
            println!("sigma: {}", gpd.sigma);
            println!("mu_hat: {}", gpd.mu_hat());
            println!("ks_gpd: {ks_gpd}");
            println!("ks_gauss: {ks_gauss}");
            let model = TailModel::new(gpd.clone(), gpd.clone(), nu)?;
            println!("risk boundary (nu = {nu}): {}", risk_boundary(&model)?);
            if let Some(path) = out {
                let body = format!(
                    "xi={}\nsigma={}\nn_peaks={}\nn_total={}\nthreshold={}\n",
                    gpd.xi, gpd.sigma, gpd.n_peaks, gpd.n_total, gpd.threshold
                );
                std::fs::write(&path, body)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Bounds { gpd, gamma, delta, jc, limit, eps_c, nu } => {
            let params = read_gpd_file(&gpd)?;
            let tv = tv_term_estimate(eps_c, gamma, delta);
            let nu0 = compute_nu0(&params, tv, gamma);
            let j_terms = params.xi / params.sigma * jc + 1.0;
            let e_term = params.xi * tv / (params.sigma * (1.0 - gamma));
            let bound = violation_prob_bound(&params, j_terms, e_term)?;
            let mu_hat = params.mu_hat();
            println!("gpd: xi={} sigma={} mu_hat={mu_hat}", params.xi, params.sigma);
            println!("tv_term estimate: {tv}");
            println!("nu0 (zero-violation exploitation range): {nu0}");
            println!("violation probability bound: {bound}");
            println!("expectation-based bound (1 - mu_hat): {}", 1.0 - mu_hat);
            println!("margin over expectation-based bound: {nu0}");
            println!("constraint slack (J_C - d): {}", jc - limit);
            let nu_var = nu.unwrap_or(nu0).min((1.0 - mu_hat) * 0.999);
            if nu_var > 0.0 && mu_hat > 0.0 {
                let p = nu_var / (1.0 - mu_hat);
                let q_h = gpd_quantile(&params, p)?;
                let f_h = params.pdf(q_h);
                let (omega_evo, omega_qr) = variance_pair(
                    mu_hat,
                    nu_var,
                    params.n_peaks.max(1),
                    f_h,
                )?;
                println!("variance pair at nu = {nu_var}: tail-estimator {omega_evo}, sample-quantile {omega_qr}");
            } else {
                println!("variance pair: undefined at nu = {nu_var}");
            }
        }
        Command::Report { runs } => {
            let summaries = summarize_runs(&runs)?;
            print!("{}", format_report(&summaries));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
