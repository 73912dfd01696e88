//! Closed-form single-pass (prefill) inference FLOPs for embedding-space
//! alignment (LLaVA-1.5 style) and SAISA, plus an instrumented oracle that
//! counts the multiply-accumulates of a real forward pass.
//!
//! Accounting follows the closed forms exactly: only matrix products inside
//! the decoder layers and the projector are counted, two FLOPs per
//! multiply-accumulate. Softmax, norms, activations, rotary rotation,
//! embedding lookup and the vocabulary projection are free. Attention scores
//! are counted over the full square (causal masking is ignored) at query
//! width `h`.
//!
//! Symbols: `n` layers, hidden `h`, FFN width `m`, key/value width `k`,
//! visual feature width `d`, `v` visual and `t` text tokens.
//!
//! Cross-attention (Flamingo style) alignment has no closed form here.

use alloc::vec::Vec;

use crate::config::{EncoderGeometry, ModelGeometry};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelWeights, TokenBatch, Variant};
use crate::numeric::{Meter, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Llava,
    Saisa,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Llava => "llava",
            Self::Saisa => "saisa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "llava" => Ok(Self::Llava),
            "saisa" => Ok(Self::Saisa),
            other => Err(invalid(alloc::format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostQuery {
    pub llm: ModelGeometry,
    pub encoder: EncoderGeometry,
    pub v: usize,
    pub t: usize,
}

impl CostQuery {
    pub fn new(llm: ModelGeometry, encoder: EncoderGeometry, v: usize, t: usize) -> Self {
        Self { llm, encoder, v, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsBreakdown {
    pub architecture: Architecture,
    pub qkvo_proj: u64,
    pub attention_scores: u64,
    pub ffn: u64,
    pub projector: u64,
    pub total: u64,
}

impl FlopsBreakdown {
    fn new(architecture: Architecture, qkvo_proj: u64, attention_scores: u64, ffn: u64, projector: u64) -> Self {
        Self {
            architecture,
            qkvo_proj,
            attention_scores,
            ffn,
            projector,
            total: qkvo_proj + attention_scores + ffn + projector,
        }
    }

    pub fn from_meter(architecture: Architecture, meter: &Meter) -> Self {
        Self::new(
            architecture,
            meter.qkvo_proj,
            meter.attention_scores,
            meter.ffn,
            meter.projector,
        )
    }

    pub fn tflops(&self) -> f64 {
        self.total as f64 / 1e12
    }
}

struct Sym {
    n: u64,
    h: u64,
    m: u64,
    k: u64,
    d: u64,
    v: u64,
    t: u64,
}

fn sym(q: &CostQuery) -> Sym {
    Sym {
        n: q.llm.n as u64,
        h: q.llm.h as u64,
        m: q.llm.m as u64,
        k: q.llm.k() as u64,
        d: q.encoder.d as u64,
        v: q.v as u64,
        t: q.t as u64,
    }
}

/// `2n(t+v)h(2h+3m+2k) + 4n(t+v)^2 h + 2vhd + 2vh^2`.
pub fn flops_llava(q: &CostQuery) -> FlopsBreakdown {
    let Sym { n, h, m, k, d, v, t } = sym(q);
    let s = t + v;
    FlopsBreakdown::new(
        Architecture::Llava,
        2 * n * s * h * (2 * h + 2 * k),
        4 * n * s * s * h,
        6 * n * s * h * m,
        2 * v * h * d + 2 * v * h * h,
    )
}

/// `2nth(2h+3m+2k) + 4nvhk + 4nt(t+v)h + 2nvhd + 2nvh^2`.
pub fn flops_saisa(q: &CostQuery) -> Result<FlopsBreakdown> {
    if q.t == 0 {
        return Err(invalid("SAISA cost needs at least one text token"));
    }
    let Sym { n, h, m, k, d, v, t } = sym(q);
    Ok(FlopsBreakdown::new(
        Architecture::Saisa,
        2 * n * t * h * (2 * h + 2 * k) + 4 * n * v * h * k,
        4 * n * t * (t + v) * h,
        6 * n * t * h * m,
        2 * n * v * h * d + 2 * n * v * h * h,
    ))
}

pub fn flops(q: &CostQuery, arch: Architecture) -> Result<FlopsBreakdown> {
    match arch {
        Architecture::Llava => Ok(flops_llava(q)),
        Architecture::Saisa => flops_saisa(q),
    }
}

/// SAISA total over LLaVA total.
pub fn flops_ratio(q: &CostQuery) -> Result<f64> {
    let saisa = flops_saisa(q)?.total;
    let llava = flops_llava(q).total;
    if llava == 0 {
        return Err(invalid("LLaVA cost is zero"));
    }
    Ok(saisa as f64 / llava as f64)
}

/// Attention-score FLOPs split by which token classes interact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSplit {
    /// Visual queries over visual keys, the `O(v^2)` block.
    pub vis_vis: u64,
    /// Both cross blocks (text over visual, visual over text), `O(vt)`.
    pub vis_text: u64,
    /// Text queries over text keys, `O(t^2)`.
    pub text_text: u64,
}

impl AttentionSplit {
    pub fn total(&self) -> u64 {
        self.vis_vis + self.vis_text + self.text_text
    }
}

/// Splits [`FlopsBreakdown::attention_scores`] into interaction classes.
///
/// LLaVA: `4nh * (v^2 + 2vt + t^2)`. SAISA has no visual queries, so its
/// `4nh * (tv + t^2)` has an empty visual-visual block.
pub fn attention_complexity_split(q: &CostQuery, arch: Architecture) -> Result<AttentionSplit> {
    let Sym { n, h, v, t, .. } = sym(q);
    let unit = 4 * n * h;
    Ok(match arch {
        Architecture::Llava => AttentionSplit {
            vis_vis: unit * v * v,
            vis_text: unit * 2 * v * t,
            text_text: unit * t * t,
        },
        Architecture::Saisa => {
            if t == 0 {
                return Err(invalid("SAISA cost needs at least one text token"));
            }
            AttentionSplit {
                vis_vis: 0,
                vis_text: unit * v * t,
                text_text: unit * t * t,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub v: usize,
    pub t: usize,
    pub llava_flops: u64,
    pub saisa_flops: u64,
    pub ratio: f64,
}

/// One row per `(v, t)`, `v`-major. `t = 0` entries are rejected.
pub fn sweep(
    llm: &ModelGeometry,
    encoder: &EncoderGeometry,
    v_grid: &[usize],
    t_grid: &[usize],
) -> Result<Vec<SweepRow>> {
    if v_grid.is_empty() || t_grid.is_empty() {
        return Err(invalid("sweep grids must be non-empty"));
    }
    let mut rows = Vec::with_capacity(v_grid.len() * t_grid.len());
    for &v in v_grid {
        for &t in t_grid {
            let q = CostQuery::new(*llm, *encoder, v, t);
            let llava = flops_llava(&q).total;
            let saisa = flops_saisa(&q)?.total;
            rows.push(SweepRow {
                v,
                t,
                llava_flops: llava,
                saisa_flops: saisa,
                ratio: saisa as f64 / llava as f64,
            });
        }
    }
    Ok(rows)
}

/// Largest formula total the instrumented oracle will execute.
pub const ORACLE_GUARD: u64 = 1_000_000_000;

/// Runs a real forward pass with metered matrix products and returns the
/// counted breakdown. Only the two architectures with closed forms are
/// accepted.
pub fn oracle_count_flops(
    variant: Variant,
    llm: &ModelGeometry,
    encoder: &EncoderGeometry,
    v: usize,
    t: usize,
) -> Result<FlopsBreakdown> {
    let arch = match variant {
        Variant::BaselineEmbed => Architecture::Llava,
        Variant::Saisa => Architecture::Saisa,
        Variant::PilotNaavit => {
            return Err(invalid("no closed-form cost for the pilot variant"))
        }
    };
    let q = CostQuery::new(*llm, *encoder, v, t);
    let predicted = flops(&q, arch)?.total;
    if predicted >= ORACLE_GUARD {
        return Err(Error::GuardExceeded {
            flops: predicted,
            limit: ORACLE_GUARD,
        });
    }
    let vocab = 8;
    let mut weights = ModelWeights::init(variant, *llm, *encoder, vocab, 0.02, 0)?;
    if variant == Variant::Saisa {
        weights = weights.with_replicated_projector()?;
    }
    let mut rng = SeededRng::new(1);
    let batch = TokenBatch::new(
        rng.uniform_matrix(v, encoder.d, -1.0, 1.0),
        (0..t).map(|i| i % vocab).collect(),
    )?;
    let mut meter = Meter::default();
    crate::model::forward_metered(&weights, &batch, &mut meter)?;
    Ok(FlopsBreakdown::from_meter(arch, &meter))
}
