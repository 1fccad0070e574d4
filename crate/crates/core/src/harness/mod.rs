//! Experiment plumbing: configuration, data preparation, training,
//! evaluation and file outputs.

pub mod check;
pub mod config;
pub mod csv;
pub mod data;
pub mod evaluate;
pub mod export;
pub mod run;
pub mod train;

pub use check::{run_checks, CheckResult};
pub use config::{
    DataSource, ExperimentConfig, KernelSettings, SplitChoice, StepMode, DATA_ROOT_ENV,
};
pub use data::{load_dataset, prepare, prepare_from, Splits};
pub use evaluate::{
    check_shapes, evaluate_checkpoint, evaluate_embedding_prototypes, evaluate_finetune,
    evaluate_kernel, evaluate_tasks, pretrain_backbone, EvalSummary,
};
pub use export::export_embeddings;
pub use run::{run_baseline, run_evaluate, run_train, run_train_on, Baseline, TrainReport};
pub use train::{train, RunRow, Snapshot, TrainOutcome, Trainer, Validation};
