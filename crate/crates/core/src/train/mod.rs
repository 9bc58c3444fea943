//! Optimizers, learning-rate schedules and the training loop.

pub mod optim;
pub mod schedule;
pub mod trainer;

pub use optim::{adam_step, sgd_step, Optimizer, OptimizerConfig};
pub use schedule::{PlateauMetric, Schedule, ScheduleConfig, PLATEAU_THRESHOLD};
pub use trainer::{
    evaluate, read_metrics, train_epoch, write_metrics, EpochMetrics, EvalMetrics, FitConfig, Trainer, METRICS_FILE,
};
