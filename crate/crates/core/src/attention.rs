//! Attention masks, vanilla causal self-attention and NAAViT attention
//! (text-only queries over visual and preceding text keys).
//!
//! Both mechanisms share one multi-head kernel with grouped-query key/value
//! sharing and rotary positions on queries and keys. Scores are scaled by
//! `1/sqrt(head_dim)`.

use alloc::format;
use alloc::vec::Vec;

use crate::config::ModelGeometry;
use crate::error::{invalid, Error, Result};
use crate::numeric::{
    masked_softmax_rows, matmul, matmul_metered, matmul_nt, matmul_tn, rope_apply,
    rope_apply_inverse, softmax_rows_backward, Component, DenseMatrix, Meter, SeededRng,
    ROPE_BASE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    CausalFull,
    Naavit { visual: usize, text: usize },
    /// Arbitrary pattern, used by tests and fault injection.
    Custom,
}

/// Boolean `query_len x key_len` allowance matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    kind: MaskKind,
    query_len: usize,
    key_len: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn from_allow(query_len: usize, key_len: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != query_len * key_len {
            return Err(invalid(format!(
                "mask data has {} entries, expected {query_len}x{key_len}",
                allow.len()
            )));
        }
        Ok(Self {
            kind: MaskKind::Custom,
            query_len,
            key_len,
            allow,
        })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    pub fn key_len(&self) -> usize {
        self.key_len
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.key_len..(i + 1) * self.key_len]
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.key_len + j]
    }

    pub fn allowed_in_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&a| a).count()
    }

    pub fn allowed_total(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    /// Checks that the stored pattern matches the definition of its kind.
    pub fn is_consistent(&self) -> bool {
        match self.kind {
            MaskKind::Custom => true,
            MaskKind::CausalFull => {
                self.query_len == self.key_len
                    && (0..self.query_len)
                        .all(|i| (0..self.key_len).all(|j| self.allows(i, j) == (j <= i)))
            }
            MaskKind::Naavit { visual, text } => {
                self.query_len == text
                    && self.key_len == visual + text
                    && (0..text).all(|i| {
                        (0..self.key_len).all(|j| self.allows(i, j) == (j < visual || j - visual <= i))
                    })
            }
        }
    }
}

/// Lower-triangular `s x s` mask.
pub fn build_causal_mask(s: usize) -> Result<AttentionMask> {
    if s == 0 {
        return Err(invalid("causal mask needs at least one token"));
    }
    let allow = (0..s * s).map(|idx| idx % s <= idx / s).collect();
    Ok(AttentionMask {
        kind: MaskKind::CausalFull,
        query_len: s,
        key_len: s,
        allow,
    })
}

/// `t x (v + t)` mask: text query `i` sees every visual key and text keys `0..=i`.
pub fn build_naavit_mask(v: usize, t: usize) -> Result<AttentionMask> {
    if t == 0 {
        return Err(invalid("NAAViT mask needs at least one text query"));
    }
    let keys = v + t;
    let allow = (0..t * keys)
        .map(|idx| {
            let (i, j) = (idx / keys, idx % keys);
            j < v || j - v <= i
        })
        .collect();
    Ok(AttentionMask {
        kind: MaskKind::Naavit { visual: v, text: t },
        query_len: t,
        key_len: keys,
        allow,
    })
}

/// Query, key, value and output projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `h x h`
    pub wq: DenseMatrix,
    /// `h x k`
    pub wk: DenseMatrix,
    /// `h x k`
    pub wv: DenseMatrix,
    /// `h x h`
    pub wo: DenseMatrix,
}

impl AttentionWeights {
    pub fn zeros(g: &ModelGeometry) -> Self {
        Self {
            wq: DenseMatrix::zeros(g.h, g.h),
            wk: DenseMatrix::zeros(g.h, g.k()),
            wv: DenseMatrix::zeros(g.h, g.k()),
            wo: DenseMatrix::zeros(g.h, g.h),
        }
    }

    pub fn random(g: &ModelGeometry, rng: &mut SeededRng, std: f64) -> Self {
        Self {
            wq: rng.normal_matrix(g.h, g.h, std),
            wk: rng.normal_matrix(g.h, g.k(), std),
            wv: rng.normal_matrix(g.h, g.k(), std),
            wo: rng.normal_matrix(g.h, g.h, std),
        }
    }

    pub fn check(&self, g: &ModelGeometry) -> Result<()> {
        let want = [
            ("wq", (g.h, g.h), self.wq.shape()),
            ("wk", (g.h, g.k()), self.wk.shape()),
            ("wv", (g.h, g.k()), self.wv.shape()),
            ("wo", (g.h, g.h), self.wo.shape()),
        ];
        for (name, expect, got) in want {
            if expect != got {
                return Err(Error::ShapeMismatch {
                    op: name,
                    left: got,
                    right: expect,
                });
            }
        }
        Ok(())
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    pub q_in: DenseMatrix,
    pub kv_in: DenseMatrix,
    pub q_pos: Vec<usize>,
    pub kv_pos: Vec<usize>,
    /// Rotated queries, `tq x h`.
    pub q: DenseMatrix,
    /// Rotated keys, `s x k`.
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    /// One `tq x s` probability matrix per query head.
    pub probs: Vec<DenseMatrix>,
    /// Concatenated head outputs, `tq x h`.
    pub o: DenseMatrix,
}

pub(crate) struct AttnGrads {
    pub d_q_in: DenseMatrix,
    pub d_kv_in: DenseMatrix,
    pub weights: AttentionWeights,
}

/// Multi-head attention of `q_in` rows over `kv_in` rows, *without* the residual.
pub(crate) fn attend(
    q_in: &DenseMatrix,
    kv_in: &DenseMatrix,
    q_pos: &[usize],
    kv_pos: &[usize],
    mask: &AttentionMask,
    w: &AttentionWeights,
    g: &ModelGeometry,
    meter: &mut Meter,
) -> Result<(DenseMatrix, AttnCache)> {
    w.check(g)?;
    if mask.query_len() != q_in.rows() || mask.key_len() != kv_in.rows() {
        return Err(Error::ShapeMismatch {
            op: "attention mask",
            left: (mask.query_len(), mask.key_len()),
            right: (q_in.rows(), kv_in.rows()),
        });
    }
    if q_pos.len() != q_in.rows() || kv_pos.len() != kv_in.rows() {
        return Err(invalid("position vector length does not match token count"));
    }
    let hd = g.head_dim();
    let q = rope_apply(
        &matmul_metered(q_in, &w.wq, meter, Component::QkvoProj)?,
        q_pos,
        hd,
        ROPE_BASE,
    )?;
    let k = rope_apply(
        &matmul_metered(kv_in, &w.wk, meter, Component::QkvoProj)?,
        kv_pos,
        hd,
        ROPE_BASE,
    )?;
    let v = matmul_metered(kv_in, &w.wv, meter, Component::QkvoProj)?;

    let scale = 1.0 / libm::sqrt(hd as f64);
    let group = g.group_size();
    let mut o = DenseMatrix::zeros(q_in.rows(), g.h);
    let mut probs = Vec::with_capacity(g.heads);
    for head in 0..g.heads {
        let kvh = head / group;
        let qh = q.slice_cols(head * hd..(head + 1) * hd);
        let kh = k.slice_cols(kvh * hd..(kvh + 1) * hd);
        let vh = v.slice_cols(kvh * hd..(kvh + 1) * hd);
        let scores = matmul_metered(&qh, &kh.transpose(), meter, Component::AttentionScores)?;
        let p = masked_softmax_rows(&scores, mask, scale)?;
        let oh = matmul_metered(&p, &vh, meter, Component::AttentionScores)?;
        o.set_cols(head * hd, &oh);
        probs.push(p);
    }
    let out = matmul_metered(&o, &w.wo, meter, Component::QkvoProj)?;
    let cache = AttnCache {
        q_in: q_in.clone(),
        kv_in: kv_in.clone(),
        q_pos: q_pos.to_vec(),
        kv_pos: kv_pos.to_vec(),
        q,
        k,
        v,
        probs,
        o,
    };
    Ok((out, cache))
}

pub(crate) fn attend_backward(
    d_out: &DenseMatrix,
    cache: &AttnCache,
    w: &AttentionWeights,
    g: &ModelGeometry,
) -> Result<AttnGrads> {
    let hd = g.head_dim();
    let scale = 1.0 / libm::sqrt(hd as f64);
    let group = g.group_size();

    let d_wo = matmul_tn(&cache.o, d_out)?;
    let d_o = matmul_nt(d_out, &w.wo)?;

    let mut d_q = DenseMatrix::zeros(cache.q.rows(), cache.q.cols());
    let mut d_k = DenseMatrix::zeros(cache.k.rows(), cache.k.cols());
    let mut d_v = DenseMatrix::zeros(cache.v.rows(), cache.v.cols());
    for head in 0..g.heads {
        let kvh = head / group;
        let p = &cache.probs[head];
        let qh = cache.q.slice_cols(head * hd..(head + 1) * hd);
        let kh = cache.k.slice_cols(kvh * hd..(kvh + 1) * hd);
        let vh = cache.v.slice_cols(kvh * hd..(kvh + 1) * hd);
        let d_oh = d_o.slice_cols(head * hd..(head + 1) * hd);

        let d_p = matmul_nt(&d_oh, &vh)?;
        d_v.add_cols(kvh * hd, &matmul_tn(p, &d_oh)?);
        let d_s = softmax_rows_backward(p, &d_p).scale(scale);
        d_q.add_cols(head * hd, &matmul(&d_s, &kh)?);
        d_k.add_cols(kvh * hd, &matmul_tn(&d_s, &qh)?);
    }
    let d_q = rope_apply_inverse(&d_q, &cache.q_pos, hd, ROPE_BASE)?;
    let d_k = rope_apply_inverse(&d_k, &cache.kv_pos, hd, ROPE_BASE)?;

    let weights = AttentionWeights {
        wq: matmul_tn(&cache.q_in, &d_q)?,
        wk: matmul_tn(&cache.kv_in, &d_k)?,
        wv: matmul_tn(&cache.kv_in, &d_v)?,
        wo: d_wo,
    };
    let d_q_in = matmul_nt(&d_q, &w.wq)?;
    let mut d_kv_in = matmul_nt(&d_k, &w.wk)?;
    d_kv_in.add_assign(&matmul_nt(&d_v, &w.wv)?)?;
    Ok(AttnGrads {
        d_q_in,
        d_kv_in,
        weights,
    })
}

/// `Attention(X) W_O + X` over the full sequence under `mask`.
pub fn vanilla_self_attention(
    x: &DenseMatrix,
    w: &AttentionWeights,
    g: &ModelGeometry,
    positions: &[usize],
    mask: &AttentionMask,
) -> Result<DenseMatrix> {
    vanilla_self_attention_metered(x, w, g, positions, mask, &mut Meter::default())
}

pub fn vanilla_self_attention_metered(
    x: &DenseMatrix,
    w: &AttentionWeights,
    g: &ModelGeometry,
    positions: &[usize],
    mask: &AttentionMask,
    meter: &mut Meter,
) -> Result<DenseMatrix> {
    let (out, _) = attend(x, x, positions, positions, mask, w, g, meter)?;
    out.add(x)
}

/// NAAViT block: queries come from the text rows only, keys and values from
/// `[visual; text]`. Returns the `t x h` updated text states; visual rows are
/// not updated.
pub fn naavit_attention(
    visual: &DenseMatrix,
    text: &DenseMatrix,
    w: &AttentionWeights,
    g: &ModelGeometry,
    vis_positions: &[usize],
    txt_positions: &[usize],
) -> Result<DenseMatrix> {
    naavit_attention_metered(
        visual,
        text,
        w,
        g,
        vis_positions,
        txt_positions,
        &mut Meter::default(),
    )
}

pub fn naavit_attention_metered(
    visual: &DenseMatrix,
    text: &DenseMatrix,
    w: &AttentionWeights,
    g: &ModelGeometry,
    vis_positions: &[usize],
    txt_positions: &[usize],
    meter: &mut Meter,
) -> Result<DenseMatrix> {
    if text.rows() == 0 {
        return Err(invalid("NAAViT attention needs at least one text token"));
    }
    let kv_in = DenseMatrix::vstack(visual, text)?;
    let kv_pos: Vec<usize> = vis_positions.iter().chain(txt_positions).copied().collect();
    let mask = build_naavit_mask(visual.rows(), text.rows())?;
    let (out, _) = attend(text, &kv_in, txt_positions, &kv_pos, &mask, w, g, meter)?;
    out.add(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy() -> ModelGeometry {
        ModelGeometry::new(2, 16, 4, 2, 32)
    }

    #[test]
    fn causal_masks() {
        let m = build_causal_mask(1).unwrap();
        assert!(m.allows(0, 0));
        let m = build_causal_mask(3).unwrap();
        let rows: Vec<Vec<bool>> = (0..3).map(|i| m.row(i).to_vec()).collect();
        assert_eq!(
            rows,
            vec![
                vec![true, false, false],
                vec![true, true, false],
                vec![true, true, true]
            ]
        );
        let m = build_causal_mask(640).unwrap();
        assert!((0..640).all(|i| m.allowed_in_row(i) == i + 1));
        assert!(m.is_consistent());
        assert!(build_causal_mask(0).is_err());
    }

    #[test]
    fn naavit_masks() {
        let m = build_naavit_mask(2, 3).unwrap();
        let rows: Vec<Vec<u8>> = (0..3)
            .map(|i| m.row(i).iter().map(|&b| b as u8).collect())
            .collect();
        assert_eq!(rows, vec![vec![1, 1, 1, 0, 0], vec![1, 1, 1, 1, 0], vec![1, 1, 1, 1, 1]]);
        assert!(m.is_consistent());

        let degenerate = build_naavit_mask(0, 4).unwrap();
        let causal = build_causal_mask(4).unwrap();
        assert!((0..4).all(|i| degenerate.row(i) == causal.row(i)));

        let single = build_naavit_mask(5, 1).unwrap();
        assert_eq!(single.allowed_in_row(0), 6);
        assert!(build_naavit_mask(3, 0).is_err());
    }

    #[test]
    fn single_token_reduces_to_value_path() {
        let g = toy();
        let mut rng = SeededRng::new(4);
        let w = AttentionWeights::random(&g, &mut rng, 0.3);
        let x = rng.uniform_matrix(1, g.h, -1.0, 1.0);
        let out =
            vanilla_self_attention(&x, &w, &g, &[0], &build_causal_mask(1).unwrap()).unwrap();
        // Expand grouped value heads to full width before W_O.
        let v = matmul(&x, &w.wv).unwrap();
        let hd = g.head_dim();
        let mut expanded = DenseMatrix::zeros(1, g.h);
        for head in 0..g.heads {
            let kvh = head / g.group_size();
            expanded.set_cols(head * hd, &v.slice_cols(kvh * hd..(kvh + 1) * hd));
        }
        let expect = matmul(&expanded, &w.wo).unwrap().add(&x).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn zero_weights_are_residual_only() {
        let g = toy();
        let x = SeededRng::new(8).uniform_matrix(5, g.h, -1.0, 1.0);
        let pos: Vec<usize> = (0..5).collect();
        let out = vanilla_self_attention(
            &x,
            &AttentionWeights::zeros(&g),
            &g,
            &pos,
            &build_causal_mask(5).unwrap(),
        )
        .unwrap();
        assert!(out.bitwise_eq(&x));
    }

    #[test]
    fn naavit_without_visual_tokens_is_causal_attention() {
        let g = toy();
        let mut rng = SeededRng::new(12);
        let w = AttentionWeights::random(&g, &mut rng, 0.3);
        let t = rng.uniform_matrix(4, g.h, -1.0, 1.0);
        let pos = [0, 1, 2, 3];
        let a = naavit_attention(&DenseMatrix::zeros(0, g.h), &t, &w, &g, &[], &pos).unwrap();
        let b = vanilla_self_attention(&t, &w, &g, &pos, &build_causal_mask(4).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn naavit_rejects_empty_text() {
        let g = toy();
        let w = AttentionWeights::zeros(&g);
        let v = DenseMatrix::zeros(2, g.h);
        assert!(naavit_attention(&v, &DenseMatrix::zeros(0, g.h), &w, &g, &[0, 1], &[]).is_err());
    }

    #[test]
    fn query_projection_cost_scales_with_text_only() {
        let g = toy();
        let mut rng = SeededRng::new(1);
        let w = AttentionWeights::random(&g, &mut rng, 0.1);
        let t = rng.uniform_matrix(3, g.h, -1.0, 1.0);
        let cost = |v: usize| {
            let vis = DenseMatrix::zeros(v, g.h);
            let vp: Vec<usize> = (0..v).collect();
            let tp: Vec<usize> = (v..v + 3).collect();
            let mut meter = Meter::default();
            naavit_attention_metered(&vis, &t, &w, &g, &vp, &tp, &mut meter).unwrap();
            meter.qkvo_proj
        };
        let (h, k) = (g.h as u64, g.k() as u64);
        // W_Q and W_O over t rows, W_K and W_V over v + t rows.
        for v in [0u64, 1, 7, 20] {
            assert_eq!(cost(v as usize), 2 * 3 * h * (2 * h) + 2 * (v + 3) * h * (2 * k));
        }
    }
}
