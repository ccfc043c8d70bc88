//! Run configuration, optimizer and schedule, checkpoints, the pre-training
//! loop and evaluation of trained checkpoints.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod run;
mod schedule;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use config::{Backbone, CheckpointConfig, ContrastiveConfig, DiagnosticsConfig, ModelConfig, OptimConfig, RunConfig};
pub use eval::{evaluate_model, evaluate_run, load_trainer, EvalConfig, EvalReport, KnnAccuracy};
pub use optim::Sgd;
pub use run::{
    checkpoint_path, extract_features, knn_accuracy, output_root, unit_rows, pretrain_run, read_grad_log, read_metrics, MetricRecord,
    RunMeta, RunOptions, RunSummary, StepOutcome, Trainer, OUT_ENV,
};
pub use schedule::LrSchedule;
