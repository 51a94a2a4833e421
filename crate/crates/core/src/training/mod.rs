//! Subject-level splits, the composite loss, Adam, the training loop and
//! evaluation metrics.
//!
//! The loss is the task loss (softmax cross-entropy or mean squared error on
//! standardized targets) plus `reg_weight` times the orthogonality penalty
//! `‖I − T·Tᵀ‖²_F` of every branch's feature transform.

mod adam;
mod loss;
mod metrics;
mod split;
mod trainer;

pub use adam::Adam;
pub use loss::{task_loss, total_loss, transform_penalty, Targets};
pub use metrics::{ClassScores, ClassificationMetrics, Metrics, PrfScores, RegressionMetrics};
pub use split::{split_by_subject, Split};
pub use trainer::{
    argmax, batch_loss, epoch_log_csv, evaluate, fit, predict, prepare_samples, train, train_step, write_epoch_log,
    EpochLog, TrainConfig, TrainOutcome,
};
