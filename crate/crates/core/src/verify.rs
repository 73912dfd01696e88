//! Property suites shared by the `verify` command and the test harness.
//!
//! Every suite returns one [`Check`] per property; a suite never stops at the
//! first failure.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::attention::{
    build_causal_mask, build_naavit_mask, naavit_attention, vanilla_self_attention, AttentionMask,
    AttentionWeights,
};
use crate::config::{EncoderGeometry, ModelGeometry, PresetRegistry, REFERENCE_COSTS};
use crate::cost::{flops, flops_ratio, oracle_count_flops, sweep, Architecture, CostQuery};
use crate::error::{invalid, Result};
use crate::model::{
    backward, check_gradients, forward, project, saisa_layer_forward, ModelWeights, TokenBatch,
    Variant,
};
use crate::numeric::{masked_softmax_rows, DenseMatrix, SeededRng};
use crate::train::{gen_batch, pretrain, Checkpoint, Rule, Stage, SyntheticTask, TrainConfig};

/// Init scale for the gradient-check and invariant models.
pub const CHECK_INIT_STD: f64 = 0.1;
/// Step of the fourth-order central difference used by the gradient suite.
pub const GRAD_STEP: f64 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const EQUIVALENCE_SEEDS: u64 = 50;
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
pub const ORACLE_V_GRID: [usize; 4] = [0, 1, 6, 17];
pub const ORACLE_T_GRID: [usize; 3] = [1, 5, 16];
pub const TOY_VOCAB: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Masks,
    Equivalence,
    Gradients,
    FlopsOracle,
    Invariants,
    TwoStage,
    Costs,
    Sweep,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Masks,
        Suite::Equivalence,
        Suite::Gradients,
        Suite::FlopsOracle,
        Suite::Invariants,
        Suite::TwoStage,
        Suite::Costs,
        Suite::Sweep,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Masks => "masks",
            Self::Equivalence => "equivalence",
            Self::Gradients => "gradients",
            Self::FlopsOracle => "flops-oracle",
            Self::Invariants => "invariants",
            Self::TwoStage => "two-stage",
            Self::Costs => "costs",
            Self::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// Records an error as a failed check instead of aborting the suite.
    fn from_result(suite: Suite, name: impl Into<String>, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(suite, name, passed, detail),
            Err(e) => Self::new(suite, name, false, e.to_string()),
        }
    }
}

/// Signature of a NAAViT mask builder; swapped out to exercise failure paths.
pub type NaavitMaskBuilder = fn(usize, usize) -> Result<AttentionMask>;

pub fn run_suite(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Masks => masks_suite(build_naavit_mask),
        Suite::Equivalence => equivalence_suite(),
        Suite::Gradients => gradients_suite(),
        Suite::FlopsOracle => flops_oracle_suite(),
        Suite::Invariants => invariants_suite(),
        Suite::TwoStage => two_stage_suite(),
        Suite::Costs => costs_suite(&PresetRegistry::builtin()),
        Suite::Sweep => sweep_suite(&PresetRegistry::builtin()),
    }
}

fn toy_geometry() -> (ModelGeometry, EncoderGeometry) {
    let r = PresetRegistry::builtin();
    (
        r.llm("toy").expect("toy preset"),
        r.encoder("toy").expect("toy preset"),
    )
}

fn toy_model(variant: Variant, seed: u64) -> Result<ModelWeights> {
    let (g, e) = toy_geometry();
    ModelWeights::init(variant, g, e, TOY_VOCAB, CHECK_INIT_STD, seed)
}

/// Per-layer projectors perturbed away from each other.
fn diverged_saisa(seed: u64) -> Result<ModelWeights> {
    let mut w = toy_model(Variant::Saisa, seed)?.with_replicated_projector()?;
    let mut rng = SeededRng::with_stream(seed, 1);
    for mlp in &mut w.projector.layers {
        let (r, c) = mlp.w1.shape();
        mlp.w1.add_assign(&rng.normal_matrix(r, c, CHECK_INIT_STD))?;
    }
    Ok(w)
}

fn toy_task(rule: Rule) -> SyntheticTask {
    let (_, e) = toy_geometry();
    SyntheticTask {
        seed: 0,
        vocab: TOY_VOCAB,
        v: e.v,
        d: e.d,
        t: 5,
        rule,
    }
}

// ---------------------------------------------------------------- masks

pub fn masks_suite(naavit: NaavitMaskBuilder) -> Vec<Check> {
    let s = Suite::Masks;
    let mut out = Vec::new();
    out.push(Check::from_result(s, "causal mask is lower triangular", (|| {
        for n in 1..=9 {
            let m = build_causal_mask(n)?;
            for i in 0..n {
                for j in 0..n {
                    if m.allows(i, j) != (j <= i) {
                        return Ok((false, format!("s={n} entry ({i},{j})")));
                    }
                }
            }
        }
        Ok((true, "s=1..9".into()))
    })()));
    out.push(Check::from_result(s, "naavit mask equals causal text rows", (|| {
        for v in [0, 1, 3, 6, 17] {
            for t in [1, 2, 5, 9] {
                let m = naavit(v, t)?;
                let c = build_causal_mask(v + t)?;
                if m.query_len() != t || m.key_len() != v + t {
                    return Ok((false, format!("v={v} t={t}: shape {}x{}", m.query_len(), m.key_len())));
                }
                for i in 0..t {
                    if m.row(i) != c.row(v + i) {
                        return Ok((false, format!("v={v} t={t}: query row {i}")));
                    }
                }
            }
        }
        Ok((true, "v in {0,1,3,6,17}, t in {1,2,5,9}".into()))
    })()));
    out.push(Check::from_result(s, "naavit allowed count is tv + t(t+1)/2", (|| {
        for (v, t) in [(0, 4), (6, 5), (17, 1)] {
            let m = naavit(v, t)?;
            let want = t * v + t * (t + 1) / 2;
            if m.allowed_total() != want {
                return Ok((false, format!("v={v} t={t}: {} != {want}", m.allowed_total())));
            }
        }
        Ok((true, String::new()))
    })()));
    out.push(Check::from_result(s, "fully masked row is rejected", (|| {
        let m = AttentionMask::from_allow(2, 2, alloc::vec![true, false, false, false])?;
        let scores = DenseMatrix::zeros(2, 2);
        Ok((masked_softmax_rows(&scores, &m, 1.0).is_err(), String::new()))
    })()));
    out
}

/// A NAAViT builder that lets the first text query see its successor. Used to
/// check that the mask suite actually fails.
#[doc(hidden)]
pub fn corrupted_naavit_mask(v: usize, t: usize) -> Result<AttentionMask> {
    let m = build_naavit_mask(v, t)?;
    let mut allow: Vec<bool> = (0..t).flat_map(|i| m.row(i).to_vec()).collect();
    if let Some(x) = allow.get_mut(v + 1) {
        *x = true;
    }
    AttentionMask::from_allow(t, v + t, allow)
}

// ---------------------------------------------------------- equivalence

pub fn equivalence_suite() -> Vec<Check> {
    let s = Suite::Equivalence;
    let mut out = Vec::new();
    out.push(Check::from_result(
        s,
        "naavit attention equals text rows of causal attention",
        (|| {
            let (g, e) = toy_geometry();
            let t = 5;
            let mut worst = 0.0f64;
            for seed in 0..EQUIVALENCE_SEEDS {
                let mut rng = SeededRng::new(seed);
                let w = AttentionWeights::random(&g, &mut rng, 0.3);
                let vis = rng.normal_matrix(e.v, g.h, 1.0);
                let txt = rng.normal_matrix(t, g.h, 1.0);
                let vp: Vec<usize> = (0..e.v).collect();
                let tp: Vec<usize> = (e.v..e.v + t).collect();
                let ours = naavit_attention(&vis, &txt, &w, &g, &vp, &tp)?;
                let all = DenseMatrix::vstack(&vis, &txt)?;
                let pos: Vec<usize> = (0..e.v + t).collect();
                let full = vanilla_self_attention(&all, &w, &g, &pos, &build_causal_mask(e.v + t)?)?;
                worst = worst.max(ours.max_abs_diff(&full.slice_rows(e.v..e.v + t)));
            }
            Ok((
                worst <= EQUIVALENCE_TOLERANCE,
                format!("{EQUIVALENCE_SEEDS} seeds, max |diff| {worst:.3e}"),
            ))
        })(),
    ));
    out.push(Check::from_result(s, "naavit with no visual tokens equals causal attention", (|| {
        let (g, _) = toy_geometry();
        let mut rng = SeededRng::new(7);
        let w = AttentionWeights::random(&g, &mut rng, 0.3);
        let txt = rng.normal_matrix(4, g.h, 1.0);
        let pos: Vec<usize> = (0..4).collect();
        let ours = naavit_attention(&DenseMatrix::zeros(0, g.h), &txt, &w, &g, &[], &pos)?;
        let full = vanilla_self_attention(&txt, &w, &g, &pos, &build_causal_mask(4)?)?;
        let d = ours.max_abs_diff(&full);
        Ok((d <= EQUIVALENCE_TOLERANCE, format!("max |diff| {d:.3e}")))
    })()));
    out
}

// ------------------------------------------------------------ gradients

/// Analytic vs finite-difference gradients for both stages' trainable sets.
pub fn gradients_suite() -> Vec<Check> {
    let s = Suite::Gradients;
    let task = toy_task(Rule::FeatureArgmax);
    let cases: [(&str, Stage); 2] = [("pretrain", Stage::Pretrain), ("finetune", Stage::Finetune)];
    let mut out = Vec::new();
    for (label, stage) in cases {
        out.push(Check::from_result(
            s,
            format!("saisa analytic gradient, {label} trainable set"),
            (|| {
                let mut w = toy_model(Variant::Saisa, 11)?;
                if stage == Stage::Finetune {
                    w = diverged_saisa(11)?;
                }
                let (batch, targets) = gen_batch(&task, 0)?;
                let set = stage.trainable();
                let reports = check_gradients(&w, &batch, &targets, |n| set.includes(n), GRAD_STEP)?;
                let worst = reports
                    .iter()
                    .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
                    .ok_or_else(|| invalid("no tensors checked"))?;
                let entries: usize = reports.iter().map(|r| r.compared).sum();
                Ok((
                    worst.max_rel_error <= GRAD_TOLERANCE,
                    format!(
                        "{} tensors, {entries} entries, worst {} rel {:.3e}",
                        reports.len(),
                        worst.name,
                        worst.max_rel_error
                    ),
                ))
            })(),
        ));
    }
    for variant in [Variant::BaselineEmbed, Variant::PilotNaavit] {
        out.push(Check::from_result(
            s,
            format!("{} analytic gradient, all tensors", variant.as_str()),
            (|| {
                let w = toy_model(variant, 12)?;
                let (batch, targets) = gen_batch(&task, 1)?;
                let reports = check_gradients(&w, &batch, &targets, |_| true, GRAD_STEP)?;
                let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
                Ok((worst <= GRAD_TOLERANCE, format!("worst rel {worst:.3e}")))
            })(),
        ));
    }
    out
}

// --------------------------------------------------------- flops oracle

pub fn flops_oracle_suite() -> Vec<Check> {
    let s = Suite::FlopsOracle;
    let (g, e) = toy_geometry();
    let mut out = Vec::new();
    for (variant, arch) in [
        (Variant::BaselineEmbed, Architecture::Llava),
        (Variant::Saisa, Architecture::Saisa),
    ] {
        out.push(Check::from_result(
            s,
            format!("{} counted flops equal closed form", variant.as_str()),
            (|| {
                let mut points = 0;
                for v in ORACLE_V_GRID {
                    for t in ORACLE_T_GRID {
                        let counted = oracle_count_flops(variant, &g, &e, v, t)?;
                        let formula = flops(&CostQuery::new(g, e, v, t), arch)?;
                        if counted != formula {
                            return Ok((
                                false,
                                format!("v={v} t={t}: counted {counted:?}, formula {formula:?}"),
                            ));
                        }
                        points += 1;
                    }
                }
                Ok((true, format!("{points} grid points, every component")))
            })(),
        ));
    }
    out
}

// ----------------------------------------------------------- invariants

pub fn invariants_suite() -> Vec<Check> {
    let s = Suite::Invariants;
    let task = toy_task(Rule::FeatureArgmax);
    let mut out = Vec::new();

    out.push(Check::from_result(s, "saisa visual rows are the projector output", (|| {
        let w = diverged_saisa(3)?;
        let (batch, _) = gen_batch(&task, 2)?;
        let trace = forward(&w, &batch)?;
        for (i, vi) in trace.visual_inputs.iter().enumerate() {
            if !vi.bitwise_eq(&project(&batch.z, &w.projector, i)?) {
                return Ok((false, format!("layer {i}")));
            }
        }
        Ok((trace.visual_inputs.len() == w.geometry.n, format!("{} layers, bitwise", w.geometry.n)))
    })()));

    out.push(Check::from_result(s, "text logits are causal", (|| {
        for variant in [Variant::BaselineEmbed, Variant::PilotNaavit, Variant::Saisa] {
            let w = toy_model(variant, 4)?;
            let (batch, _) = gen_batch(&task, 3)?;
            let base = forward(&w, &batch)?.logits;
            let t = batch.text_len();
            for j in 0..t {
                let mut altered = batch.clone();
                altered.text_ids[j] = (altered.text_ids[j] + 1) % TOY_VOCAB;
                let logits = forward(&w, &altered)?.logits;
                for i in 0..j {
                    if logits.row(i) != base.row(i) {
                        return Ok((false, format!("{}: row {i} moved when token {j} changed", variant.as_str())));
                    }
                }
                if j + 1 < t && logits.row(j) == base.row(j) {
                    return Ok((false, format!("{}: row {j} ignores its own token", variant.as_str())));
                }
            }
        }
        Ok((true, "three variants".into()))
    })()));

    out.push(Check::from_result(s, "variants agree when there are no visual tokens", (|| {
        let (_, e) = toy_geometry();
        let batch = TokenBatch::new(DenseMatrix::zeros(0, e.d), alloc::vec![0, 5, 2, 9, 1])?;
        let mut logits = Vec::new();
        for variant in [Variant::BaselineEmbed, Variant::PilotNaavit, Variant::Saisa] {
            logits.push(forward(&toy_model(variant, 5)?, &batch)?.logits);
        }
        let d = logits[0].max_abs_diff(&logits[1]).max(logits[0].max_abs_diff(&logits[2]));
        Ok((d <= 1e-10, format!("max |diff| {d:.3e}")))
    })()));

    out.push(Check::from_result(s, "naavit is invariant to visual token order", (|| {
        let (g, e) = toy_geometry();
        let t = 5;
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let mut rng = SeededRng::new(100 + seed);
            let w = AttentionWeights::random(&g, &mut rng, 0.3);
            let vis = rng.normal_matrix(e.v, g.h, 1.0);
            let txt = rng.normal_matrix(t, g.h, 1.0);
            let vp: Vec<usize> = (0..e.v).collect();
            let tp: Vec<usize> = (e.v..e.v + t).collect();
            let perm = permutation(e.v, &mut rng);
            let pv = vis.select_rows(&perm);
            let pp: Vec<usize> = perm.iter().map(|&i| vp[i]).collect();
            let a = naavit_attention(&vis, &txt, &w, &g, &vp, &tp)?;
            let b = naavit_attention(&pv, &txt, &w, &g, &pp, &tp)?;
            worst = worst.max(a.max_abs_diff(&b));

            let lw = toy_model(Variant::Saisa, seed)?.layers.remove(0);
            let a = saisa_layer_forward(&txt, &vis, &lw, &g, &vp, &tp)?;
            let b = saisa_layer_forward(&txt, &pv, &lw, &g, &pp, &tp)?;
            worst = worst.max(a.max_abs_diff(&b));
        }
        Ok((worst <= 1e-12, format!("max |diff| {worst:.3e}")))
    })()));
    out
}

fn permutation(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.below(i + 1));
    }
    p
}

// ------------------------------------------------------------ two-stage

pub fn two_stage_suite() -> Vec<Check> {
    let s = Suite::TwoStage;
    let task = toy_task(Rule::FeatureArgmax);
    let mut out = Vec::new();

    let pretrained: Result<(ModelWeights, ModelWeights)> = (|| {
        let w = toy_model(Variant::Saisa, 21)?;
        let cfg = TrainConfig::new(Stage::Pretrain, 5, 4, 1e-2);
        let (ck, _) = pretrain(Checkpoint::fresh(w.clone(), 21), &task, &cfg)?;
        Ok((w, ck.weights))
    })();

    out.push(Check::from_result(s, "pretrain only moves projector tensors", match &pretrained {
        Ok((before, after)) => {
            let mut moved = Vec::new();
            let mut frozen_ok = true;
            for ((name, a), (_, b)) in before.tensors().iter().zip(after.tensors()) {
                let same = a.bitwise_eq(b);
                if name.starts_with("projector.") {
                    if !same {
                        moved.push(name.clone());
                    }
                } else if !same {
                    frozen_ok = false;
                    moved.push(name.clone());
                }
            }
            Ok((frozen_ok && !moved.is_empty(), format!("changed: {}", moved.join(", "))))
        }
        Err(e) => Err(e.clone()),
    }));

    out.push(Check::from_result(s, "replicated per-layer projectors are identical", match &pretrained {
        Ok((_, after)) => (|| {
            let r = after.clone().with_replicated_projector()?;
            let first = &r.projector.layers[0];
            let same = r
                .projector
                .layers
                .iter()
                .all(|m| m.w1.bitwise_eq(&first.w1) && m.w2.bitwise_eq(&first.w2))
                && first.w1.bitwise_eq(&after.projector.layers[0].w1);
            Ok((same && r.projector.layers.len() == r.geometry.n, format!("{} copies", r.projector.layers.len())))
        })(),
        Err(e) => Err(e.clone()),
    }));

    out.push(Check::from_result(s, "shared gradient is the sum of per-layer gradients", (|| {
        let shared = toy_model(Variant::Saisa, 22)?;
        let replicated = shared.clone().with_replicated_projector()?;
        let (batch, targets) = gen_batch(&task, 4)?;
        let (_, gs) = backward(&shared, &batch, &targets)?;
        let (_, gr) = backward(&replicated, &batch, &targets)?;
        let mut sum = gr.projector.layers[0].clone();
        for m in &gr.projector.layers[1..] {
            sum.w1.add_assign(&m.w1)?;
            sum.w2.add_assign(&m.w2)?;
        }
        let d = gs.projector.layers[0]
            .w1
            .max_abs_diff(&sum.w1)
            .max(gs.projector.layers[0].w2.max_abs_diff(&sum.w2));
        Ok((d <= 1e-10, format!("max |diff| {d:.3e}")))
    })()));
    out
}

// ---------------------------------------------------------------- costs

/// Reference totals and the headline ratio.
pub fn costs_suite(presets: &PresetRegistry) -> Vec<Check> {
    let s = Suite::Costs;
    let mut out = Vec::new();
    for r in REFERENCE_COSTS {
        let name = format!("{} {} + {} at t={}", r.arch.as_str(), r.llm, r.encoder, r.text_tokens);
        out.push(Check::from_result(s, name, (|| {
            let enc = presets.encoder(r.encoder)?;
            let q = CostQuery::new(presets.llm(r.llm)?, enc, enc.v, r.text_tokens);
            let got = flops(&q, r.arch)?.tflops();
            let rel = libm::fabs(got - r.tflops) / r.tflops;
            let detail = format!(
                "{got:.4} vs {:.2} TFLOPs, {:.2}% (tol {:.1}%)",
                r.tflops,
                rel * 100.0,
                r.rel_tol * 100.0
            );
            if r.disputed {
                return Ok((true, format!("{detail}, reference disputed, not gated")));
            }
            Ok((rel <= r.rel_tol, detail))
        })()));
    }
    out.push(Check::from_result(s, "saisa/llava ratio for vicuna-7b + clip at t=64", (|| {
        let enc = presets.encoder("clip-vit-l-336")?;
        let q = CostQuery::new(presets.llm("vicuna-7b")?, enc, enc.v, 64);
        let r = flops_ratio(&q)?;
        Ok(((0.325..=0.345).contains(&r), format!("{r:.4}")))
    })()));
    out
}

// ---------------------------------------------------------------- sweep

pub fn sweep_suite(presets: &PresetRegistry) -> Vec<Check> {
    let s = Suite::Sweep;
    let v_grid: Vec<usize> = (64..=2048).step_by(64).collect();
    let t_grid = [16, 64, 256];
    let mut out = Vec::new();
    for llm in ["vicuna-7b", "mistral-7b"] {
        out.push(Check::from_result(
            s,
            format!("ratio non-increasing in v, {llm} + clip-vit-l-336"),
            (|| {
                let rows = sweep(
                    &presets.llm(llm)?,
                    &presets.encoder("clip-vit-l-336")?,
                    &v_grid,
                    &t_grid,
                )?;
                for &t in &t_grid {
                    let ratios: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.ratio).collect();
                    if let Some(i) = ratios.windows(2).position(|w| w[1] > w[0]) {
                        return Ok((false, format!("t={t}: rises at v={}", v_grid[i + 1])));
                    }
                }
                Ok((true, format!("{} rows", rows.len())))
            })(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_pass_and_corruption_is_caught() {
        assert!(masks_suite(build_naavit_mask).iter().all(|c| c.passed));
        let bad = masks_suite(corrupted_naavit_mask);
        assert!(bad.iter().any(|c| !c.passed && c.name.contains("causal text rows")));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.as_str()).unwrap(), s);
        }
        assert!(Suite::parse("bogus").is_err());
    }
}
