//! Supernet training: sandwich sampling, masked forward passes, in-place
//! distillation, plus the single-model and DSNN baselines.

mod eval;
mod model;
mod sampling;
mod step;
mod train;

pub use eval::{evaluate, Evaluator};
pub use model::{LayerScores, LinearIds, ModelArch, PruneCriterion, SupernetModel, DENSE_DROPOUT, PRUNE_SCORE_EPS};
pub use sampling::{sandwich_sample, split_batch, BatchPartition};
pub use step::{
    dsnn_train_step, single_train_step, subnet_loss, supernet_train_step, supernet_train_step_observed,
    teacher_logits, StepMetrics, StepObserver, SubnetLoss, Teacher, TrainConfig, TrainMode, FORWARD_COST,
};
pub use train::{finetune, train, Finetune, RngState, Trainer};

// ChaCha stream ids separating the independent random sequences of a run.
pub const INIT_STREAM: u64 = 0;
pub const TRAIN_STREAM: u64 = 1;
pub const EPOCH_STREAM_BASE: u64 = 1 << 32;
