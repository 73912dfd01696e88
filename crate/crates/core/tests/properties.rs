use proptest::prelude::*;

use saisa_core::attention::{
    build_causal_mask, build_naavit_mask, naavit_attention, vanilla_self_attention,
    AttentionMask, AttentionWeights,
};
use saisa_core::config::{ModelGeometry, PresetRegistry};
use saisa_core::cost::{
    attention_complexity_split, flops, flops_llava, flops_ratio, flops_saisa, Architecture,
    CostQuery,
};
use saisa_core::numeric::{
    masked_softmax_rows, matmul, rms_norm, rope_apply, DenseMatrix, SeededRng, RMS_EPS,
    ROPE_BASE,
};

fn matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    SeededRng::new(seed).normal_matrix(rows, cols, 1.0)
}

/// Scalar-loop reference attention with explicit rotary angles. Includes the
/// residual like the library entry points.
fn naive_attention(
    q_in: &DenseMatrix,
    kv_in: &DenseMatrix,
    q_pos: &[usize],
    kv_pos: &[usize],
    mask: &AttentionMask,
    w: &AttentionWeights,
    g: &ModelGeometry,
) -> DenseMatrix {
    let hd = g.head_dim();
    let rotate = |x: &DenseMatrix, pos: &[usize]| {
        let mut out = x.clone();
        for r in 0..x.rows() {
            for c0 in (0..x.cols()).step_by(2) {
                let i = (c0 % hd) / 2;
                let theta = pos[r] as f64 * ROPE_BASE.powf(-2.0 * i as f64 / hd as f64);
                let (a, b) = (x.get(r, c0), x.get(r, c0 + 1));
                out.set(r, c0, a * theta.cos() - b * theta.sin());
                out.set(r, c0 + 1, a * theta.sin() + b * theta.cos());
            }
        }
        out
    };
    let q = rotate(&matmul(q_in, &w.wq).unwrap(), q_pos);
    let k = rotate(&matmul(kv_in, &w.wk).unwrap(), kv_pos);
    let v = matmul(kv_in, &w.wv).unwrap();
    let group = g.heads / g.kv_heads;
    let mut o = DenseMatrix::zeros(q_in.rows(), g.h);
    for head in 0..g.heads {
        let kvh = head / group;
        for i in 0..q_in.rows() {
            let mut scores = Vec::new();
            for j in 0..kv_in.rows() {
                if mask.allows(i, j) {
                    let dot: f64 = (0..hd)
                        .map(|c| q.get(i, head * hd + c) * k.get(j, kvh * hd + c))
                        .sum();
                    scores.push((j, dot / (hd as f64).sqrt()));
                }
            }
            let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s.1 - max).exp()).sum();
            for c in 0..hd {
                let acc: f64 = scores
                    .iter()
                    .map(|&(j, s)| (s - max).exp() / z * v.get(j, kvh * hd + c))
                    .sum();
                o.set(i, head * hd + c, acc);
            }
        }
    }
    matmul(&o, &w.wo).unwrap().add(q_in).unwrap()
}

fn toy_query(v: usize, t: usize) -> CostQuery {
    let r = PresetRegistry::builtin();
    CostQuery::new(r.llm("toy").unwrap(), r.encoder("toy").unwrap(), v, t)
}

fn real_query(llm: &str, v: usize, t: usize) -> CostQuery {
    let r = PresetRegistry::builtin();
    CostQuery::new(r.llm(llm).unwrap(), r.encoder("clip-vit-l-336").unwrap(), v, t)
}

#[test]
fn attention_matches_scalar_reference() {
    for (heads, kv_heads) in [(4, 4), (4, 2), (4, 1), (2, 2)] {
        let g = ModelGeometry::new(1, 16, heads, kv_heads, 32);
        for seed in 0..5 {
            let mut rng = SeededRng::new(seed);
            let w = AttentionWeights::random(&g, &mut rng, 0.3);
            let x = rng.normal_matrix(7, 16, 1.0);
            let pos: Vec<usize> = (0..7).collect();
            let mask = build_causal_mask(7).unwrap();
            let ours = vanilla_self_attention(&x, &w, &g, &pos, &mask).unwrap();
            let want = naive_attention(&x, &x, &pos, &pos, &mask, &w, &g);
            assert!(ours.max_abs_diff(&want) < 1e-12, "heads {heads}/{kv_heads}");

            let vis = x.slice_rows(0..3);
            let txt = x.slice_rows(3..7);
            let ours = naavit_attention(&vis, &txt, &w, &g, &pos[..3], &pos[3..]).unwrap();
            let mask = build_naavit_mask(3, 4).unwrap();
            let want = naive_attention(&txt, &x, &pos[3..], &pos, &mask, &w, &g);
            assert!(ours.max_abs_diff(&want) < 1e-12);
        }
    }
}

#[test]
fn grouped_query_equals_duplicated_heads() {
    let gqa = ModelGeometry::new(1, 16, 4, 2, 32);
    let mha = ModelGeometry::new(1, 16, 4, 4, 32);
    let mut rng = SeededRng::new(3);
    let w = AttentionWeights::random(&gqa, &mut rng, 0.3);
    let hd = gqa.head_dim();
    let widen = |m: &DenseMatrix| {
        let mut out = DenseMatrix::zeros(m.rows(), mha.k());
        for head in 0..mha.heads {
            let src = head / gqa.group_size();
            out.set_cols(head * hd, &m.slice_cols(src * hd..(src + 1) * hd));
        }
        out
    };
    let wide = AttentionWeights {
        wq: w.wq.clone(),
        wk: widen(&w.wk),
        wv: widen(&w.wv),
        wo: w.wo.clone(),
    };
    let x = rng.normal_matrix(6, 16, 1.0);
    let pos: Vec<usize> = (0..6).collect();
    let mask = build_causal_mask(6).unwrap();
    let a = vanilla_self_attention(&x, &w, &gqa, &pos, &mask).unwrap();
    let b = vanilla_self_attention(&x, &wide, &mha, &pos, &mask).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn future_tokens_do_not_leak() {
    let g = ModelGeometry::new(1, 16, 4, 2, 32);
    let mut rng = SeededRng::new(4);
    let w = AttentionWeights::random(&g, &mut rng, 0.3);
    let x = rng.normal_matrix(6, 16, 1.0);
    let pos: Vec<usize> = (0..6).collect();
    let mask = build_causal_mask(6).unwrap();
    let base = vanilla_self_attention(&x, &w, &g, &pos, &mask).unwrap();
    let mut y = x.clone();
    for c in 0..16 {
        y.set(4, c, 3.0);
    }
    let moved = vanilla_self_attention(&y, &w, &g, &pos, &mask).unwrap();
    assert_eq!(moved.slice_rows(0..4), base.slice_rows(0..4));
    assert_ne!(moved.row(5), base.row(5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(q in 1usize..6, k in 1usize..8, seed in any::<u64>(), scale in 0.05f64..4.0) {
        let s = matrix(q, k, seed).scale(5.0);
        let mask = AttentionMask::from_allow(q, k, (0..q * k).map(|i| i % k <= (i / k) % k).collect()).unwrap();
        let p = masked_softmax_rows(&s, &mask, scale).unwrap();
        for i in 0..q {
            let sum: f64 = p.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for j in 0..k {
                prop_assert!(p.get(i, j) >= 0.0);
                if !mask.allows(i, j) {
                    prop_assert_eq!(p.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn identity_is_neutral(r in 1usize..7, c in 1usize..7, seed in any::<u64>()) {
        let a = matrix(r, c, seed);
        prop_assert_eq!(matmul(&a, &DenseMatrix::identity(c)).unwrap(), a.clone());
        prop_assert_eq!(matmul(&DenseMatrix::identity(r), &a).unwrap(), a);
    }

    #[test]
    fn matmul_is_associative(n in 1usize..5, seed in any::<u64>()) {
        let a = matrix(n, n + 1, seed);
        let b = matrix(n + 1, n + 2, seed ^ 1);
        let c = matrix(n + 2, n, seed ^ 2);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-10);
    }

    #[test]
    fn rope_at_zero_is_identity_and_preserves_norms(rows in 1usize..5, heads in 1usize..4, seed in any::<u64>(), p in 0usize..4096) {
        let x = matrix(rows, heads * 4, seed);
        prop_assert_eq!(rope_apply(&x, &vec![0; rows], 4, ROPE_BASE).unwrap(), x.clone());
        let y = rope_apply(&x, &vec![p; rows], 4, ROPE_BASE).unwrap();
        for r in 0..rows {
            let nx: f64 = x.row(r).iter().map(|v| v * v).sum();
            let ny: f64 = y.row(r).iter().map(|v| v * v).sum();
            prop_assert!((nx - ny).abs() < 1e-9 * nx.max(1.0));
        }
    }

    #[test]
    fn rope_scores_depend_on_offset_only(p in 0usize..500, shift in 0usize..500, seed in any::<u64>()) {
        let q = matrix(1, 8, seed);
        let k = matrix(1, 8, seed ^ 7);
        let dot = |a: &DenseMatrix, b: &DenseMatrix| -> f64 { a.row(0).iter().zip(b.row(0)).map(|(x, y)| x * y).sum() };
        let s1 = dot(&rope_apply(&q, &[p + 3], 8, ROPE_BASE).unwrap(), &rope_apply(&k, &[p], 8, ROPE_BASE).unwrap());
        let s2 = dot(&rope_apply(&q, &[p + shift + 3], 8, ROPE_BASE).unwrap(), &rope_apply(&k, &[p + shift], 8, ROPE_BASE).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-9);
    }

    #[test]
    fn rms_norm_rows_have_unit_rms(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
        let x = matrix(rows, cols, seed).scale(10.0);
        let y = rms_norm(&x, &vec![1.0; cols]).unwrap();
        for r in 0..rows {
            let mx: f64 = x.row(r).iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let my: f64 = y.row(r).iter().map(|v| v * v).sum::<f64>() / cols as f64;
            prop_assert!((my - mx / (mx + RMS_EPS)).abs() < 1e-12);
        }
    }

    #[test]
    fn naavit_mask_structure(v in 0usize..20, t in 1usize..12) {
        let m = build_naavit_mask(v, t).unwrap();
        prop_assert!(m.is_consistent());
        for i in 0..t {
            prop_assert_eq!(m.allowed_in_row(i), v + i + 1);
            for j in 0..v { prop_assert!(m.allows(i, j)); }
        }
    }

    #[test]
    fn breakdowns_sum_and_saisa_is_cheaper(v in 0usize..3000, t in 1usize..512) {
        for llm in ["vicuna-7b", "mistral-7b"] {
            let q = real_query(llm, v, t);
            let l = flops_llava(&q);
            let s = flops_saisa(&q).unwrap();
            prop_assert_eq!(l.total, l.qkvo_proj + l.attention_scores + l.ffn + l.projector);
            prop_assert_eq!(s.total, s.qkvo_proj + s.attention_scores + s.ffn + s.projector);
            prop_assert!(s.total <= l.total || v == 0);
            let r = flops_ratio(&q).unwrap();
            prop_assert!(r > 0.0 && r <= 1.0 + 1e-12);
            if v == 0 { prop_assert!((r - 1.0).abs() < 1e-12); }
        }
    }

    #[test]
    fn costs_grow_with_tokens(v in 0usize..2000, t in 1usize..300) {
        for arch in [Architecture::Llava, Architecture::Saisa] {
            let base = flops(&real_query("vicuna-7b", v, t), arch).unwrap().total;
            prop_assert!(flops(&real_query("vicuna-7b", v + 1, t), arch).unwrap().total > base);
            prop_assert!(flops(&real_query("vicuna-7b", v, t + 1), arch).unwrap().total > base);
        }
    }

    #[test]
    fn attention_split_sums_to_score_flops(v in 0usize..64, t in 1usize..64) {
        let q = toy_query(v, t);
        for arch in [Architecture::Llava, Architecture::Saisa] {
            let split = attention_complexity_split(&q, arch).unwrap();
            prop_assert_eq!(split.total(), flops(&q, arch).unwrap().attention_scores);
        }
        prop_assert_eq!(attention_complexity_split(&q, Architecture::Saisa).unwrap().vis_vis, 0);
    }
}
