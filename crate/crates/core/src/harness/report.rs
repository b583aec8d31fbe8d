//! Cross-run report: scans a runs directory, aggregates each run's training
//! metrics, and scores runs with the return/violation ratio. Ratios are
//! normalized within each environment group so variants are comparable.

use super::metrics::read_metrics_csv;
use super::train::ratio_metric;
use crate::error::{EvoError, Result};
use std::path::Path;

/// Stability constant in the ratio denominator.
pub const EPS_STABILITY: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub env_id: String,
    pub mode: String,
    pub epochs: usize,
    pub average_return: f64,
    pub violation_rate: f64,
    pub ratio: f64,
    /// Ratio divided by the sum of ratios within the same environment.
    pub normalized_ratio: f64,
}

fn config_value(text: &str, key: &str) -> Option<String> {
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == key {
                return Some(v.trim().to_string());
            }
        }
    }
    None
}

/// Summarize every run directory (a subdirectory holding `metrics.csv`).
pub fn summarize_runs(runs_dir: &Path) -> Result<Vec<RunSummary>> {
    let mut summaries = Vec::new();
    let mut dirs: Vec<_> = std::fs::read_dir(runs_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let metrics = read_metrics_csv(&std::fs::read_to_string(dir.join("metrics.csv"))?)?;
        if metrics.is_empty() {
            continue;
        }
        let config_text = std::fs::read_to_string(dir.join("config.txt")).unwrap_or_default();
        let env_id = config_value(&config_text, "env_id").unwrap_or_else(|| "?".into());
        let mode = config_value(&config_text, "mode").unwrap_or_else(|| "?".into());
        let n = metrics.len() as f64;
        let average_return = metrics.iter().map(|m| m.mean_return).sum::<f64>() / n;
        let violation_rate = metrics.iter().map(|m| m.violation_rate).sum::<f64>() / n;
        summaries.push(RunSummary {
            name,
            env_id,
            mode,
            epochs: metrics.len(),
            average_return,
            violation_rate,
            ratio: ratio_metric(average_return, violation_rate, EPS_STABILITY),
            normalized_ratio: 0.0,
        });
    }
    if summaries.is_empty() {
        return Err(EvoError::InvalidInput(format!(
            "no runs with metrics.csv under {}",
            runs_dir.display()
        )));
    }
    // Normalize within environment groups.
    let envs: Vec<String> = {
        let mut v: Vec<String> = summaries.iter().map(|s| s.env_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    for env in envs {
        let total: f64 = summaries
            .iter()
            .filter(|s| s.env_id == env)
            .map(|s| s.ratio.abs())
            .sum();
        if total > 0.0 {
            for s in summaries.iter_mut().filter(|s| s.env_id == env) {
                s.normalized_ratio = s.ratio / total;
            }
        }
    }
    Ok(summaries)
}

/// Human-readable ratio table.
pub fn format_report(summaries: &[RunSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:<14} {:<26} {:>7} {:>12} {:>10} {:>12} {:>12}\n",
        "run", "env", "mode", "epochs", "avg_return", "viol_rate", "ratio", "norm_ratio"
    ));
    for s in summaries {
        out.push_str(&format!(
            "{:<28} {:<14} {:<26} {:>7} {:>12.4} {:>10.4} {:>12.4} {:>12.4}\n",
            s.name,
            s.env_id,
            s.mode,
            s.epochs,
            s.average_return,
            s.violation_rate,
            s.ratio,
            s.normalized_ratio
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{write_metrics_csv, EpochMetrics};

    fn fake_run(dir: &Path, name: &str, env: &str, mode: &str, ret: f64, viol: f64) {
        let d = dir.join(name);
        std::fs::create_dir_all(&d).unwrap();
        let row = EpochMetrics {
            epoch: 0,
            mean_return: ret,
            mean_cost: 1.0,
            violation_rate: viol,
            nu: 0.0,
            mu_hat: 0.5,
            xi: 0.3,
            sigma: 1.0,
            risk_boundary: 1.0,
            nu0: 0.0,
            prob_bound: 0.1,
            ks_gpd: 0.1,
            ks_gauss: 0.2,
            wall_time: 0.0,
        };
        std::fs::write(d.join("metrics.csv"), write_metrics_csv(&[row])).unwrap();
        std::fs::write(d.join("config.txt"), format!("env_id={env}\nmode={mode}\n")).unwrap();
    }

    #[test]
    fn summarizes_and_normalizes_within_env() {
        let dir = tempfile::tempdir().unwrap();
        fake_run(dir.path(), "a", "hazard-grid", "evo", 10.0, 0.0);
        fake_run(dir.path(), "b", "hazard-grid", "cpo-ablation", 10.0, 0.099);
        fake_run(dir.path(), "c", "velocity-chain", "evo", 3.0, 0.0);
        let summaries = summarize_runs(dir.path()).unwrap();
        assert_eq!(summaries.len(), 3);
        let grid: Vec<&RunSummary> =
            summaries.iter().filter(|s| s.env_id == "hazard-grid").collect();
        let total: f64 = grid.iter().map(|s| s.normalized_ratio).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // The zero-violation run dominates the normalized score.
        let a = grid.iter().find(|s| s.name == "a").unwrap();
        let b = grid.iter().find(|s| s.name == "b").unwrap();
        assert!(a.normalized_ratio > b.normalized_ratio);
        let report = format_report(&summaries);
        assert!(report.contains("hazard-grid"));
    }

    #[test]
    fn empty_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(summarize_runs(dir.path()).is_err());
    }
}
