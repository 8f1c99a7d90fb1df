//! Centralized training with validation checkpointing, early stopping and
//! learning-rate reduction, plus classification metrics.

mod metrics;
mod schedule;
mod train;

pub use metrics::{argmax, compute_metrics, probability_rows, roc_auc, Averaging, ClassMetrics, MetricsReport};
pub use schedule::{Decision, LrReduce, Schedule};
pub use train::{
    evaluate, predict, train, write_history_csv, CheckpointRecord, EpochRecord, ModelTask, Precision, Split,
    TrainConfig, TrainOutcome, TrainTask,
};

#[cfg(test)]
mod tests;
