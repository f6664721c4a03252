//! Optimizers, the epoch loop, cross-validation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod cv;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load, save, stored_dtype, Loaded, RngState};
pub use config::{OptimizerKind, TrainConfig};
pub use cv::{kfold_cv, CvReport, FoldResult};
pub use optim::{sgd_step, Adam, Optimizer};
pub use trainer::{
    build_vocabulary, derive_seed, encode_examples, evaluate, prepare_model, train, train_fixed, EncodedExample,
    EpochMetrics, Evaluation, FixedRun, Prepared, TrainOutcome,
};
