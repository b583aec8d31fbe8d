use evo_core::harness::{train, Mode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = match args.get(1).map(|s| s.as_str()).unwrap_or("cpo") {
        "evo" => Mode::Evo,
        _ => Mode::CpoAblation,
    };
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = TrainConfig {
        env_id: "hazard-grid".into(),
        seed,
        gamma: 0.998,
        total_steps: 2000 * epochs,
        epoch_batch_steps: 2000,
        value_iters: 10,
        cost_limit: 25.0,
        max_episode_len: Some(150),
        mode,
        offpolicy_fraction: 0.75,
        nu_init: 0.05,
        runs_dir: "/tmp/probe_runs".into(),
        run_name: Some(format!("p_{mode:?}_{seed}")),
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    let last = &out.metrics[out.metrics.len().saturating_sub(10)..];
    let jc: f64 = last.iter().map(|m| m.mean_cost).sum::<f64>() / last.len() as f64;
    let viol: f64 = last.iter().map(|m| m.violation_rate).sum::<f64>() / last.len() as f64;
    let ret: f64 = last.iter().map(|m| m.mean_return).sum::<f64>() / last.len() as f64;
    let total_viol: f64 = out.metrics.iter().map(|m| m.violation_rate).sum::<f64>()
        / out.metrics.len() as f64;
    println!(
        "RESULT mode={mode:?} seed={seed} ep1_viol={:.3} final10: ret {ret:.3} J_C {jc:.3} viol {viol:.4} | mean_viol_all {total_viol:.4}",
        out.metrics[0].violation_rate
    );
}
