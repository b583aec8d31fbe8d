//! Training loop, configuration, metrics, evaluation, and reporting.

mod config;
mod metrics;
mod report;
mod rollout;
mod train;

pub use config::{Mode, TrainConfig};
pub use metrics::{read_metrics_csv, write_metrics_csv, EpochMetrics, CSV_HEADER};
pub use report::{format_report, summarize_runs, RunSummary, EPS_STABILITY};
pub use rollout::{collect_batch, evaluate, RolloutBatch};
pub use train::{policy_step, ratio_metric, train, TrainOutput};
