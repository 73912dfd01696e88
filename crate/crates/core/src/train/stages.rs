use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{backward, loss, ModelWeights, ProjectorMode, Variant};

use super::optim::{optimizer_step, AdamConfig, AdamState};
use super::task::{gen_batch, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Freshly initialized, no stage run yet.
    Init,
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::Pretrain => "pretrain",
            Self::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Self::Init),
            "pretrain" => Ok(Self::Pretrain),
            "finetune" => Ok(Self::Finetune),
            other => Err(invalid(alloc::format!("unknown stage `{other}`"))),
        }
    }

    pub fn trainable(&self) -> TrainableSet {
        match self {
            Self::Init | Self::Pretrain => TrainableSet::ProjectorOnly,
            Self::Finetune => TrainableSet::All,
        }
    }
}

/// Which tensors receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableSet {
    /// Only `projector.*`; the LLM, embeddings and norms are frozen.
    ProjectorOnly,
    All,
}

impl TrainableSet {
    pub fn includes(&self, tensor: &str) -> bool {
        match self {
            Self::ProjectorOnly => tensor.starts_with("projector."),
            Self::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        "f64"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(stage: Stage, steps: u64, batch_size: usize, lr: f64) -> Self {
        Self {
            stage,
            steps,
            batch_size,
            adam: AdamConfig::with_lr(lr),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage == Stage::Init {
            return Err(invalid("init is not a trainable stage"));
        }
        if self.batch_size == 0 || !(self.adam.lr > 0.0) {
            return Err(invalid("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Weights plus everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    /// Last stage that ran.
    pub stage: Stage,
    /// Optimizer updates applied across all stages.
    pub step: u64,
    pub optimizer: AdamState,
    pub seed: u64,
    pub precision: Precision,
}

impl Checkpoint {
    pub fn fresh(weights: ModelWeights, seed: u64) -> Self {
        Self {
            weights,
            stage: Stage::Init,
            step: 0,
            optimizer: AdamState::default(),
            seed,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub stage: Stage,
    pub loss: f64,
    pub lr: f64,
}

/// First sample index of the held-out evaluation stream. Training consumes
/// indices from 0 upwards and never reaches it.
pub const EVAL_OFFSET: u64 = 1 << 40;

/// Mean loss over `count` held-out samples.
pub fn eval_loss(w: &ModelWeights, task: &SyntheticTask, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(invalid("evaluation needs at least one sample"));
    }
    let mut total = 0.0;
    for i in 0..count as u64 {
        let (batch, targets) = gen_batch(task, EVAL_OFFSET + i)?;
        total += loss(w, &batch, &targets)?;
    }
    Ok(total / count as f64)
}

/// Mean loss and gradient over `batch_size` consecutive samples.
fn batch_gradient(
    w: &ModelWeights,
    task: &SyntheticTask,
    first_sample: u64,
    batch_size: usize,
) -> Result<(f64, ModelWeights)> {
    let mut total = w.zeros_like();
    let mut loss = 0.0;
    for b in 0..batch_size as u64 {
        let (batch, targets) = gen_batch(task, first_sample + b)?;
        let (l, g) = backward(w, &batch, &targets)?;
        loss += l;
        for ((_, acc), (_, gi)) in total.tensors_mut().into_iter().zip(g.tensors()) {
            acc.add_assign(gi)?;
        }
    }
    let inv = 1.0 / batch_size as f64;
    for (_, acc) in total.tensors_mut() {
        for x in acc.as_mut_slice() {
            *x *= inv;
        }
    }
    Ok((loss * inv, total))
}

fn train_loop(
    ckpt: &mut Checkpoint,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<Vec<StepLog>> {
    let trainable = cfg.stage.trainable();
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let first = ckpt.step * cfg.batch_size as u64;
        let (loss, grads) = batch_gradient(&ckpt.weights, task, first, cfg.batch_size)?;
        optimizer_step(&mut ckpt.weights, &grads, &mut ckpt.optimizer, &cfg.adam, trainable)?;
        log.push(StepLog {
            step: ckpt.step,
            stage: cfg.stage,
            loss,
            lr: cfg.adam.lr,
        });
        ckpt.step += 1;
    }
    ckpt.stage = cfg.stage;
    Ok(log)
}

/// Projector-only training with a single shared MLP.
pub fn pretrain(
    mut ckpt: Checkpoint,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepLog>)> {
    cfg.validate()?;
    if cfg.stage != Stage::Pretrain {
        return Err(invalid("pretrain called with a non-pretrain config"));
    }
    if ckpt.stage == Stage::Finetune {
        return Err(Error::StageRegression {
            from: ckpt.stage.as_str(),
            to: cfg.stage.as_str(),
        });
    }
    if ckpt.weights.projector.mode != ProjectorMode::Shared {
        return Err(invalid("pre-training requires a shared projector"));
    }
    let log = train_loop(&mut ckpt, task, cfg)?;
    Ok((ckpt, log))
}

/// Full training. A shared SAISA projector is first replicated into one MLP
/// per layer; optimizer state restarts at the stage transition.
pub fn finetune(
    mut ckpt: Checkpoint,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepLog>)> {
    cfg.validate()?;
    if cfg.stage != Stage::Finetune {
        return Err(invalid("finetune called with a non-finetune config"));
    }
    if ckpt.stage != Stage::Finetune {
        if ckpt.weights.variant == Variant::Saisa
            && ckpt.weights.projector.mode == ProjectorMode::Shared
        {
            ckpt.weights = ckpt.weights.with_replicated_projector()?;
        }
        ckpt.optimizer = AdamState::default();
    }
    let log = train_loop(&mut ckpt, task, cfg)?;
    Ok((ckpt, log))
}

/// Dispatches on `cfg.stage`.
pub fn run_stage(
    ckpt: Checkpoint,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepLog>)> {
    match cfg.stage {
        Stage::Pretrain => pretrain(ckpt, task, cfg),
        Stage::Finetune => finetune(ckpt, task, cfg),
        Stage::Init => Err(invalid("init is not a trainable stage")),
    }
}
