//! Linear evaluation with switchable or slimmable heads, k-NN evaluation,
//! the closed-form least-squares verifier for a shared probe layer, and the
//! binary feature container those tools read.

mod features;
mod knn;
mod linear;
mod lsq;

pub use features::{read_features, sidecar_path, write_features, Dtype, FeatureMeta};
pub use knn::{knn_eval, knn_predict, DEFAULT_K};
pub use linear::{linear_probe_train, probe_accuracy, ProbeHead, ProbeMode, ProbeTrainConfig, WidthAccuracy};
pub use lsq::{
    block_inverse, condition_number, fit_least_squares, from_dmatrix, lsq_probe_losses, shared_probe_condition, spd_inverse,
    squared_loss, to_dmatrix, BlockInverse, ConditionReport, LsqProbeLosses, ProbeProblem, MAX_CONDITION,
};
