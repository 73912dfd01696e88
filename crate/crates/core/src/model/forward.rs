use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numeric::{matmul, matmul_nt, matmul_tn, rms_norm, rms_norm_backward, DenseMatrix, Meter};

use super::layer::{layer_backward, layer_forward, LayerCache, LayerMode};
use super::projector::{project_backward, project_cached, ProjectorCache};
use super::weights::{ModelWeights, Variant};

/// One image's synthetic features plus its text ids and positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    /// `v x d` visual features.
    pub z: DenseMatrix,
    pub text_ids: Vec<usize>,
    pub vis_positions: Vec<usize>,
    pub txt_positions: Vec<usize>,
}

impl TokenBatch {
    /// Visual tokens at positions `0..v`, text at `v..v+t`.
    pub fn new(z: DenseMatrix, text_ids: Vec<usize>) -> Result<Self> {
        let v = z.rows();
        let t = text_ids.len();
        Self::with_positions(z, text_ids, (0..v).collect(), (v..v + t).collect())
    }

    pub fn with_positions(
        z: DenseMatrix,
        text_ids: Vec<usize>,
        vis_positions: Vec<usize>,
        txt_positions: Vec<usize>,
    ) -> Result<Self> {
        if text_ids.is_empty() {
            return Err(invalid("token batch needs at least one text token"));
        }
        if vis_positions.len() != z.rows() || txt_positions.len() != text_ids.len() {
            return Err(invalid("position vectors do not match token counts"));
        }
        let increasing = |p: &[usize]| p.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&vis_positions) || !increasing(&txt_positions) {
            return Err(invalid("positions must be strictly increasing within a segment"));
        }
        if let (Some(&lv), Some(&ft)) = (vis_positions.last(), txt_positions.first()) {
            if ft <= lv {
                return Err(invalid("text positions must follow visual positions"));
            }
        }
        Ok(Self {
            z,
            text_ids,
            vis_positions,
            txt_positions,
        })
    }

    pub fn visual_len(&self) -> usize {
        self.z.rows()
    }

    pub fn text_len(&self) -> usize {
        self.text_ids.len()
    }
}

/// Per-layer hidden states of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `T_i`, the text rows entering layer `i`.
    pub text_states: Vec<DenseMatrix>,
    /// `V_i`, the projected visual rows fed to layer `i` (SAISA only).
    pub visual_inputs: Vec<DenseMatrix>,
    /// `H_i`, text rows after the attention block of layer `i`.
    pub attn_states: Vec<DenseMatrix>,
    /// `t x vocab`
    pub logits: DenseMatrix,
}

struct Cached {
    trace: ForwardTrace,
    layers: Vec<LayerCache>,
    projectors: Vec<(usize, ProjectorCache)>,
    final_in: DenseMatrix,
    final_normed: DenseMatrix,
}

fn layer_mode(w: &ModelWeights) -> LayerMode {
    match w.variant {
        Variant::BaselineEmbed => LayerMode::VANILLA,
        Variant::PilotNaavit if w.pilot_frozen_visual => LayerMode::PILOT_FROZEN,
        Variant::PilotNaavit => LayerMode::PILOT,
        Variant::Saisa => LayerMode::SAISA,
    }
}

fn check_batch(w: &ModelWeights, batch: &TokenBatch) -> Result<()> {
    w.check()?;
    if batch.z.cols() != w.encoder.d {
        return Err(Error::ShapeMismatch {
            op: "visual features",
            left: batch.z.shape(),
            right: (batch.z.rows(), w.encoder.d),
        });
    }
    if let Some(&bad) = batch.text_ids.iter().find(|&&id| id >= w.vocab) {
        return Err(invalid(format!("token id {bad} outside vocabulary of {}", w.vocab)));
    }
    Ok(())
}

fn forward_cached(w: &ModelWeights, batch: &TokenBatch, meter: &mut Meter) -> Result<Cached> {
    check_batch(w, batch)?;
    let g = &w.geometry;
    let mode = layer_mode(w);
    let mut txt = w.embed.select_rows(&batch.text_ids);
    let mut text_states = Vec::with_capacity(g.n);
    let mut visual_inputs = Vec::new();
    let mut attn_states = Vec::with_capacity(g.n);
    let mut layers = Vec::with_capacity(g.n);
    let mut projectors = Vec::new();

    let mut vis = if w.variant == Variant::Saisa {
        DenseMatrix::zeros(0, g.h)
    } else {
        let (v0, pc) = project_cached(&batch.z, &w.projector, 0, meter)?;
        projectors.push((0, pc));
        v0
    };

    for (i, lw) in w.layers.iter().enumerate() {
        if w.variant == Variant::Saisa {
            let (vi, pc) = project_cached(&batch.z, &w.projector, i, meter)?;
            projectors.push((i, pc));
            visual_inputs.push(vi.clone());
            vis = vi;
        }
        text_states.push(txt.clone());
        let out = layer_forward(
            &vis,
            &txt,
            lw,
            g,
            &batch.vis_positions,
            &batch.txt_positions,
            mode,
            meter,
        )?;
        attn_states.push(out.cache.h_txt.clone());
        layers.push(out.cache);
        txt = out.txt;
        if w.variant != Variant::Saisa {
            vis = out.vis;
        }
    }

    let final_normed = rms_norm(&txt, w.final_norm.as_slice())?;
    let logits = matmul(&final_normed, &w.unembed)?;
    Ok(Cached {
        trace: ForwardTrace {
            text_states,
            visual_inputs,
            attn_states,
            logits,
        },
        layers,
        projectors,
        final_in: txt,
        final_normed,
    })
}

/// Runs the variant's forward pass and returns per-layer states and text logits.
pub fn forward(w: &ModelWeights, batch: &TokenBatch) -> Result<ForwardTrace> {
    forward_metered(w, batch, &mut Meter::default())
}

/// [`forward`] with matrix products counted into `meter`.
pub fn forward_metered(
    w: &ModelWeights,
    batch: &TokenBatch,
    meter: &mut Meter,
) -> Result<ForwardTrace> {
    Ok(forward_cached(w, batch, meter)?.trace)
}

/// Greedy next token after the last text position.
pub fn greedy_next(w: &ModelWeights, batch: &TokenBatch) -> Result<usize> {
    let trace = forward(w, batch)?;
    let last = trace.logits.row(trace.logits.rows() - 1);
    Ok(argmax(last))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// Mean cross-entropy of `logits` rows against `targets`; also returns `dL/dlogits`.
pub fn cross_entropy(logits: &DenseMatrix, targets: &[usize]) -> Result<(f64, DenseMatrix)> {
    if targets.len() != logits.rows() {
        return Err(invalid("targets length does not match logit rows"));
    }
    let t = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    for (i, &target) in targets.iter().enumerate() {
        if target >= logits.cols() {
            return Err(invalid(format!("target {target} outside vocabulary")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| libm::exp(x - max)).sum();
        let lse = max + libm::log(sum);
        loss += lse - row[target];
        for (gj, &x) in grad.row_mut(i).iter_mut().zip(row) {
            *gj = libm::exp(x - lse) / t;
        }
        grad.row_mut(i)[target] -= 1.0 / t;
    }
    let loss = loss / t;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}

/// Mean next-token cross-entropy over all text positions.
pub fn loss(w: &ModelWeights, batch: &TokenBatch, targets: &[usize]) -> Result<f64> {
    let trace = forward(w, batch)?;
    Ok(cross_entropy(&trace.logits, targets)?.0)
}

/// Analytic gradient of [`loss`] with respect to every tensor of `w`.
///
/// Returns the loss and a weight-shaped gradient container.
pub fn backward(
    w: &ModelWeights,
    batch: &TokenBatch,
    targets: &[usize],
) -> Result<(f64, ModelWeights)> {
    let cached = forward_cached(w, batch, &mut Meter::default())?;
    let (loss, d_logits) = cross_entropy(&cached.trace.logits, targets)?;
    let g = &w.geometry;
    let mut grads = w.zeros_like();

    grads.unembed = matmul_tn(&cached.final_normed, &d_logits)?;
    let d_final = matmul_nt(&d_logits, &w.unembed)?;
    let (mut d_txt, d_gain) = rms_norm_backward(&cached.final_in, w.final_norm.as_slice(), &d_final);
    grads.final_norm = DenseMatrix::row_vector(&d_gain);

    let v = batch.visual_len();
    let mut d_vis = DenseMatrix::zeros(v, g.h);
    for i in (0..g.n).rev() {
        let (dv, dt) = layer_backward(
            &d_vis,
            &d_txt,
            &cached.layers[i],
            &w.layers[i],
            g,
            &mut grads.layers[i],
        )?;
        d_txt = dt;
        if w.variant == Variant::Saisa {
            let (layer, pc) = &cached.projectors[i];
            let slot = w.projector.slot(*layer)?;
            accumulate_projector(&mut grads, slot, &dv, pc, w)?;
            d_vis = DenseMatrix::zeros(v, g.h);
        } else {
            d_vis = dv;
        }
    }
    if w.variant != Variant::Saisa {
        let (_, pc) = &cached.projectors[0];
        accumulate_projector(&mut grads, 0, &d_vis, pc, w)?;
    }
    for (row, &id) in batch.text_ids.iter().enumerate() {
        for (gv, d) in grads.embed.row_mut(id).iter_mut().zip(d_txt.row(row)) {
            *gv += d;
        }
    }
    Ok((loss, grads))
}

fn accumulate_projector(
    grads: &mut ModelWeights,
    slot: usize,
    d_out: &DenseMatrix,
    cache: &ProjectorCache,
    w: &ModelWeights,
) -> Result<()> {
    let g = project_backward(d_out, cache, &w.projector.layers[slot])?;
    let dst = &mut grads.projector.layers[slot];
    dst.w1.add_assign(&g.w1)?;
    dst.w2.add_assign(&g.w2)
}
