//! Test log-likelihood and KDE-based sample scores, with per-trial CSV and
//! aggregated Markdown reports.

mod kde;
mod report;

pub use kde::{cv_bandwidth, default_bandwidth_grid, log_grid, KdeModel, DEFAULT_FOLDS};
pub use report::{
    aggregate, evaluate, evaluate_trial, markdown_report, trials_csv, EvaluationReport, MeanCi, TrialMetrics,
    DEFAULT_SAMPLE_COUNT, TRIAL_CSV_HEADER,
};
