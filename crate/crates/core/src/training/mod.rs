//! Target normalization, optimizer, schedules, metrics, the training loop
//! and random hyperparameter search.

mod data;
mod metrics;
mod optim;
mod search;
mod trainer;

pub use data::{normalize_targets, select, split_dataset, Split, SplitSizes, TargetSelection, TargetStats};
pub use metrics::{
    error_ratio, loss_and_metrics, report_csv, report_rows, ChemicalAccuracyTable, Metrics, REPORT_HEADER,
};
pub use optim::{lr_at, Adam, AdamHyper, LrSchedule};
pub use search::{random_search, sample_trials, SearchReport, SearchSpace, TrialConfig, TrialResult, TrialStatus};
pub use trainer::{
    batch_gradient, evaluate, evaluate_prepared, predict_all, selection_score, train, PreparedSet, RunRecord,
    TrainConfig, TrainOutcome,
};
