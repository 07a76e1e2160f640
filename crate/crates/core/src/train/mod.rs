//! Losses, optimizers, learning-rate schedules, metrics and the epoch loop.

mod loss;
mod metrics;
mod optim;
mod sched;
mod trainer;

pub use loss::LossKind;
pub use metrics::{argmax, compute_metrics, MetricsReport};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, ADAM_EPS};
pub use sched::{Scheduler, SchedulerConfig, ONE_CYCLE_DIV, ONE_CYCLE_FINAL_DIV};
pub use trainer::{
    evaluate, one_cycle_steps, train, EarlyStopping, EpochRecord, PrimaryMetric, TrainOutcome, TrainSettings, TrainStatus,
    EVAL_BATCH,
};
