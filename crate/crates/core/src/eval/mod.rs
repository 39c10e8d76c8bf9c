//! Training, metrics, zero-shot transfer and the ablation switchboard.

pub mod ablation;
pub mod metrics;
pub mod train;

pub use ablation::{ablation, pooled_baseline, run_ablation_suite, zero_shot_eval, AblationRow, AblationSpec, AblationTable, ZeroShotReport, ABLATIONS, FULL_MODEL};
pub use metrics::{argmax, average_precision, fuse_views, mean_average_precision, mean_std, top1_accuracy, MapReport};
pub use train::{evaluate, predict_all, predict_all_views, score, train, EvalReport, StepRecord, TrainConfig, TrainOutcome};
