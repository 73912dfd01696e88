//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 6 | magic `SAISA1` |
//! | 4 | format version (`u32`) |
//! | 8 | metadata length `L` (`u64`) |
//! | L | UTF-8 JSON metadata, including the tensor index |
//! | .. | raw `f64` values of every indexed tensor, in index order |
//!
//! The index lists model tensors in canonical order followed by the Adam
//! moments (`adam.m.<name>`, `adam.v.<name>`) of every tensor that has them.

use std::io;
use std::path::Path;

use saisa_core::config::{EncoderGeometry, ModelGeometry};
use saisa_core::model::{ModelWeights, ProjectorMode, Variant};
use saisa_core::train::{AdamState, Checkpoint, Moments, Precision, Rule, Stage, SyntheticTask};
use saisa_core::DenseMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::presets::{EncoderEntry, LlmEntry};

pub const MAGIC: &[u8; 6] = b"SAISA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: expected {:?}", std::str::from_utf8(MAGIC).unwrap())]
    BadMagic,
    #[error("version mismatch: file has {found}, this build reads {FORMAT_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated tensor `{0}`")]
    TruncatedTensor(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("tensor index does not match the model: {0}")]
    Layout(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub rule: String,
    pub seed: u64,
    pub vocab: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub variant: String,
    pub stage: String,
    pub llm_preset: String,
    pub encoder_preset: String,
    pub geometry: LlmEntry,
    pub encoder: EncoderEntry,
    pub vocab: usize,
    pub projector_mode: String,
    pub pilot_frozen_visual: bool,
    pub seed: u64,
    pub precision: String,
    pub step: u64,
    pub optimizer_step: u64,
    pub task: Option<TaskMeta>,
    pub tensors: Vec<TensorEntry>,
}

/// A checkpoint plus the preset ids and task it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedCheckpoint {
    pub checkpoint: Checkpoint,
    pub llm_preset: String,
    pub encoder_preset: String,
    pub task: Option<SyntheticTask>,
}

fn task_meta(t: &SyntheticTask) -> TaskMeta {
    TaskMeta {
        rule: t.rule.as_str().into(),
        seed: t.seed,
        vocab: t.vocab,
        t: t.t,
    }
}

fn named_tensors(c: &Checkpoint) -> Vec<(String, &DenseMatrix)> {
    let mut out = c.weights.tensors();
    for (name, m) in &c.optimizer.moments {
        out.push((format!("adam.m.{name}"), &m.m));
        out.push((format!("adam.v.{name}"), &m.v));
    }
    out
}

pub fn encode(saved: &SavedCheckpoint) -> Vec<u8> {
    let c = &saved.checkpoint;
    let w = &c.weights;
    let tensors = named_tensors(c);
    let meta = Metadata {
        variant: w.variant.as_str().into(),
        stage: c.stage.as_str().into(),
        llm_preset: saved.llm_preset.clone(),
        encoder_preset: saved.encoder_preset.clone(),
        geometry: w.geometry.into(),
        encoder: w.encoder.into(),
        vocab: w.vocab,
        projector_mode: w.projector.mode.as_str().into(),
        pilot_frozen_visual: w.pilot_frozen_visual,
        seed: c.seed,
        precision: c.precision.as_str().into(),
        step: c.step,
        optimizer_step: c.optimizer.step,
        task: saved.task.as_ref().map(task_meta),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                shape: [m.rows(), m.cols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let body: usize = tensors.iter().map(|(_, m)| m.len() * 8).sum();
    let mut out = Vec::with_capacity(18 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in &tensors {
        for x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn layout_err(e: impl ToString) -> CheckpointError {
    CheckpointError::Layout(e.to_string())
}

fn parse_projector_mode(s: &str) -> Result<ProjectorMode, CheckpointError> {
    match s {
        "shared" => Ok(ProjectorMode::Shared),
        "per-layer" => Ok(ProjectorMode::PerLayer),
        other => Err(CheckpointError::Metadata(format!("unknown projector mode `{other}`"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<SavedCheckpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 18 {
        return Err(CheckpointError::TruncatedHeader);
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let meta_len = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let meta_end = usize::try_from(meta_len)
        .ok()
        .and_then(|l| l.checked_add(18))
        .filter(|&end| end <= bytes.len())
        .ok_or(CheckpointError::TruncatedHeader)?;
    let meta: Metadata = serde_json::from_slice(&bytes[18..meta_end])
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

    let variant = Variant::parse(&meta.variant).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let stage = Stage::parse(&meta.stage).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    if meta.precision != Precision::F64.as_str() {
        return Err(CheckpointError::Metadata(format!(
            "unsupported precision `{}`",
            meta.precision
        )));
    }
    let geometry: ModelGeometry = meta.geometry.into();
    let encoder: EncoderGeometry = meta.encoder.into();
    let mut weights =
        ModelWeights::init(variant, geometry, encoder, meta.vocab, 0.0, 0).map_err(layout_err)?;
    if parse_projector_mode(&meta.projector_mode)? == ProjectorMode::PerLayer {
        weights = weights.with_replicated_projector().map_err(layout_err)?;
    }
    weights.pilot_frozen_visual = meta.pilot_frozen_visual;

    // Read every tensor in index order, then route it by name.
    let mut offset = meta_end;
    let mut values = Vec::with_capacity(meta.tensors.len());
    for entry in &meta.tensors {
        let [r, c] = entry.shape;
        let len = r.checked_mul(c).ok_or_else(|| layout_err("tensor shape overflows"))?;
        let end = len
            .checked_mul(8)
            .and_then(|b| b.checked_add(offset))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::TruncatedTensor(entry.name.clone()))?;
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        values.push(DenseMatrix::new(r, c, data).map_err(layout_err)?);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - offset));
    }

    let model_count = weights.tensors().len();
    if meta.tensors.len() < model_count {
        return Err(layout_err(format!(
            "{} tensors indexed, the model needs {model_count}",
            meta.tensors.len()
        )));
    }
    let mut values = values.into_iter();
    for ((name, slot), entry) in weights.tensors_mut().into_iter().zip(&meta.tensors) {
        let value = values.next().unwrap();
        if entry.name != name || value.shape() != slot.shape() {
            return Err(layout_err(format!(
                "expected `{name}` {:?}, found `{}` {:?}",
                slot.shape(),
                entry.name,
                value.shape()
            )));
        }
        *slot = value;
    }

    let names: Vec<String> = weights.tensors().into_iter().map(|(n, _)| n).collect();
    let mut optimizer = AdamState {
        step: meta.optimizer_step,
        ..AdamState::default()
    };
    let rest: Vec<_> = meta.tensors[model_count..].iter().zip(values).collect();
    if rest.len() % 2 != 0 {
        return Err(layout_err("unpaired optimizer moment"));
    }
    for pair in rest.chunks(2) {
        let (me, m) = &pair[0];
        let (ve, v) = &pair[1];
        let name = me
            .name
            .strip_prefix("adam.m.")
            .filter(|n| ve.name.strip_prefix("adam.v.") == Some(*n))
            .ok_or_else(|| layout_err(format!("unexpected tensor `{}`", me.name)))?;
        let pos = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| layout_err(format!("moments for unknown tensor `{name}`")))?;
        let want = weights.tensors()[pos].1.shape();
        if m.shape() != want || v.shape() != want {
            return Err(layout_err(format!("moment shape for `{name}`")));
        }
        optimizer.moments.insert(
            name.to_string(),
            Moments {
                m: m.clone(),
                v: v.clone(),
            },
        );
    }

    let task = match &meta.task {
        None => None,
        Some(t) => Some(SyntheticTask {
            seed: t.seed,
            vocab: t.vocab,
            v: encoder.v,
            d: encoder.d,
            t: t.t,
            rule: Rule::parse(&t.rule).map_err(|e| CheckpointError::Metadata(e.to_string()))?,
        }),
    };
    Ok(SavedCheckpoint {
        checkpoint: Checkpoint {
            weights,
            stage,
            step: meta.step,
            optimizer,
            seed: meta.seed,
            precision: Precision::F64,
        },
        llm_preset: meta.llm_preset,
        encoder_preset: meta.encoder_preset,
        task,
    })
}

pub fn save_checkpoint(saved: &SavedCheckpoint, path: &Path) -> AppResult<()> {
    std::fs::write(path, encode(saved)).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> AppResult<SavedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|source| AppError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
