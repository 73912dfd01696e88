//! Two-stage toy training: projector-only pre-training with one shared MLP,
//! then replication into per-layer MLPs and full fine-tuning.

mod optim;
mod stages;
mod task;

pub use optim::{optimizer_step, AdamConfig, AdamState, Moments};
pub use stages::{
    eval_loss, finetune, pretrain, run_stage, Checkpoint, Precision, Stage, StepLog, TrainConfig,
    TrainableSet, EVAL_OFFSET,
};
pub use task::{gen_batch, Rule, SyntheticTask};
