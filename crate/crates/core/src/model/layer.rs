use alloc::vec::Vec;

use crate::attention::{
    attend, attend_backward, build_causal_mask, build_naavit_mask, AttnCache,
};
use crate::config::ModelGeometry;
use crate::error::{invalid, Result};
use crate::numeric::{
    matmul_metered, matmul_nt, matmul_tn, rms_norm, rms_norm_backward, silu_grad, silu_matrix,
    Component, DenseMatrix, Meter,
};

use super::weights::DecoderLayerWeights;

/// How a decoder layer treats the visual rows it is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerMode {
    /// Visual rows also act as queries (vanilla causal attention).
    pub queries_all: bool,
    /// Visual rows go through the attention input norm.
    pub norm_visual: bool,
    /// Visual rows go through the FFN.
    pub ffn_visual: bool,
}

impl LayerMode {
    pub const VANILLA: Self = Self {
        queries_all: true,
        norm_visual: true,
        ffn_visual: true,
    };
    pub const PILOT: Self = Self {
        queries_all: false,
        norm_visual: true,
        ffn_visual: true,
    };
    pub const PILOT_FROZEN: Self = Self {
        queries_all: false,
        norm_visual: true,
        ffn_visual: false,
    };
    pub const SAISA: Self = Self {
        queries_all: false,
        norm_visual: false,
        ffn_visual: false,
    };
}

pub(crate) struct FfnCache {
    x: DenseMatrix,
    gate: DenseMatrix,
    up: DenseMatrix,
    act: DenseMatrix,
}

/// `down(silu(x Wg) * (x Wu))`.
pub(crate) fn ffn_forward(
    x: &DenseMatrix,
    lw: &DecoderLayerWeights,
    meter: &mut Meter,
) -> Result<(DenseMatrix, FfnCache)> {
    let gate = matmul_metered(x, &lw.ffn_gate, meter, Component::Ffn)?;
    let up = matmul_metered(x, &lw.ffn_up, meter, Component::Ffn)?;
    let act = silu_matrix(&gate).hadamard(&up)?;
    let out = matmul_metered(&act, &lw.ffn_down, meter, Component::Ffn)?;
    Ok((
        out,
        FfnCache {
            x: x.clone(),
            gate,
            up,
            act,
        },
    ))
}

fn ffn_backward(
    d_out: &DenseMatrix,
    c: &FfnCache,
    lw: &DecoderLayerWeights,
    grads: &mut DecoderLayerWeights,
) -> Result<DenseMatrix> {
    grads.ffn_down.add_assign(&matmul_tn(&c.act, d_out)?)?;
    let d_act = matmul_nt(d_out, &lw.ffn_down)?;
    let d_gate = d_act.hadamard(&c.up)?.hadamard(&c.gate.map(silu_grad))?;
    let d_up = d_act.hadamard(&silu_matrix(&c.gate))?;
    grads.ffn_gate.add_assign(&matmul_tn(&c.x, &d_gate)?)?;
    grads.ffn_up.add_assign(&matmul_tn(&c.x, &d_up)?)?;
    let mut d_x = matmul_nt(&d_gate, &lw.ffn_gate)?;
    d_x.add_assign(&matmul_nt(&d_up, &lw.ffn_up)?)?;
    Ok(d_x)
}

pub(crate) struct LayerCache {
    mode: LayerMode,
    visual_rows: usize,
    /// Input of the attention norm: `[vis; txt]` or `txt`.
    attn_norm_in: DenseMatrix,
    attn: AttnCache,
    /// Input of the FFN norm: `[h_vis; h_txt]` or `h_txt`.
    ffn_norm_in: DenseMatrix,
    ffn: FfnCache,
    pub h_txt: DenseMatrix,
}

pub(crate) struct LayerOutput {
    pub vis: DenseMatrix,
    pub txt: DenseMatrix,
    pub cache: LayerCache,
}

pub(crate) fn layer_forward(
    vis: &DenseMatrix,
    txt: &DenseMatrix,
    lw: &DecoderLayerWeights,
    g: &ModelGeometry,
    vis_pos: &[usize],
    txt_pos: &[usize],
    mode: LayerMode,
    meter: &mut Meter,
) -> Result<LayerOutput> {
    let (v, t) = (vis.rows(), txt.rows());
    if t == 0 {
        return Err(invalid("decoder layer needs at least one text token"));
    }
    if mode.queries_all && !mode.norm_visual {
        return Err(invalid("visual queries require normalized visual rows"));
    }
    let all_pos: Vec<usize> = vis_pos.iter().chain(txt_pos).copied().collect();
    let gain = lw.norm_attn.as_slice();

    let (attn_norm_in, kv_in, q_in) = if mode.norm_visual {
        let x = DenseMatrix::vstack(vis, txt)?;
        let xn = rms_norm(&x, gain)?;
        let q_in = if mode.queries_all {
            xn.clone()
        } else {
            xn.slice_rows(v..v + t)
        };
        (x, xn, q_in)
    } else {
        let tn = rms_norm(txt, gain)?;
        (txt.clone(), DenseMatrix::vstack(vis, &tn)?, tn)
    };

    let (attn_out, attn) = if mode.queries_all {
        let mask = build_causal_mask(v + t)?;
        attend(&q_in, &kv_in, &all_pos, &all_pos, &mask, &lw.attn, g, meter)?
    } else {
        let mask = build_naavit_mask(v, t)?;
        attend(&q_in, &kv_in, txt_pos, &all_pos, &mask, &lw.attn, g, meter)?
    };

    let (h_vis, h_txt) = if mode.queries_all {
        let h = attn_out.add(&attn_norm_in)?;
        (h.slice_rows(0..v), h.slice_rows(v..v + t))
    } else {
        (vis.clone(), attn_out.add(txt)?)
    };

    let ffn_norm_in = if mode.ffn_visual {
        DenseMatrix::vstack(&h_vis, &h_txt)?
    } else {
        h_txt.clone()
    };
    let normed = rms_norm(&ffn_norm_in, lw.norm_ffn.as_slice())?;
    let (ffn_out, ffn) = ffn_forward(&normed, lw, meter)?;
    let out = ffn_out.add(&ffn_norm_in)?;

    let (vis_out, txt_out) = if mode.ffn_visual {
        (out.slice_rows(0..v), out.slice_rows(v..v + t))
    } else {
        (h_vis, out)
    };
    Ok(LayerOutput {
        vis: vis_out,
        txt: txt_out,
        cache: LayerCache {
            mode,
            visual_rows: v,
            attn_norm_in,
            attn,
            ffn_norm_in,
            ffn,
            h_txt,
        },
    })
}

/// Returns `(d_vis_in, d_txt_in)` and accumulates weight gradients into `grads`.
pub(crate) fn layer_backward(
    d_vis_out: &DenseMatrix,
    d_txt_out: &DenseMatrix,
    c: &LayerCache,
    lw: &DecoderLayerWeights,
    g: &ModelGeometry,
    grads: &mut DecoderLayerWeights,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let mode = c.mode;
    let v = c.visual_rows;
    let t = d_txt_out.rows();

    // FFN block with residual.
    let d_out = if mode.ffn_visual {
        DenseMatrix::vstack(d_vis_out, d_txt_out)?
    } else {
        d_txt_out.clone()
    };
    let d_normed = ffn_backward(&d_out, &c.ffn, lw, grads)?;
    let (d_from_norm, d_gain) = rms_norm_backward(&c.ffn_norm_in, lw.norm_ffn.as_slice(), &d_normed);
    for (gsum, d) in grads.norm_ffn.as_mut_slice().iter_mut().zip(d_gain) {
        *gsum += d;
    }
    let d_h = d_out.add(&d_from_norm)?;
    let (d_h_vis, d_h_txt) = if mode.ffn_visual {
        (d_h.slice_rows(0..v), d_h.slice_rows(v..v + t))
    } else {
        (d_vis_out.clone(), d_h)
    };

    // Attention block with residual.
    let d_attn_out = if mode.queries_all {
        DenseMatrix::vstack(&d_h_vis, &d_h_txt)?
    } else {
        d_h_txt.clone()
    };
    let ag = attend_backward(&d_attn_out, &c.attn, &lw.attn, g)?;
    grads.attn.wq.add_assign(&ag.weights.wq)?;
    grads.attn.wk.add_assign(&ag.weights.wk)?;
    grads.attn.wv.add_assign(&ag.weights.wv)?;
    grads.attn.wo.add_assign(&ag.weights.wo)?;

    let gain = lw.norm_attn.as_slice();
    let (mut d_vis, mut d_txt) = (d_h_vis, d_h_txt);
    if mode.norm_visual {
        let mut d_xn = ag.d_kv_in;
        if mode.queries_all {
            d_xn.add_assign(&ag.d_q_in)?;
        } else {
            for i in 0..t {
                for (a, b) in d_xn.row_mut(v + i).iter_mut().zip(ag.d_q_in.row(i)) {
                    *a += b;
                }
            }
        }
        let (d_x, d_gain) = rms_norm_backward(&c.attn_norm_in, gain, &d_xn);
        for (gsum, d) in grads.norm_attn.as_mut_slice().iter_mut().zip(d_gain) {
            *gsum += d;
        }
        d_vis.add_assign(&d_x.slice_rows(0..v))?;
        d_txt.add_assign(&d_x.slice_rows(v..v + t))?;
    } else {
        let mut d_tn = ag.d_kv_in.slice_rows(v..v + t);
        d_tn.add_assign(&ag.d_q_in)?;
        d_vis.add_assign(&ag.d_kv_in.slice_rows(0..v))?;
        let (d_x, d_gain) = rms_norm_backward(&c.attn_norm_in, gain, &d_tn);
        for (gsum, d) in grads.norm_attn.as_mut_slice().iter_mut().zip(d_gain) {
            *gsum += d;
        }
        d_txt.add_assign(&d_x)?;
    }
    Ok((d_vis, d_txt))
}

/// One SAISA decoder layer: NAAViT attention with `V_i` as raw key/value rows
/// and normalized text rows as queries, then the FFN on text rows only.
pub fn saisa_layer_forward(
    text: &DenseMatrix,
    visual: &DenseMatrix,
    lw: &DecoderLayerWeights,
    g: &ModelGeometry,
    vis_positions: &[usize],
    txt_positions: &[usize],
) -> Result<DenseMatrix> {
    let out = layer_forward(
        visual,
        text,
        lw,
        g,
        vis_positions,
        txt_positions,
        LayerMode::SAISA,
        &mut Meter::default(),
    )?;
    Ok(out.txt)
}
