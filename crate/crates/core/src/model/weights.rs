use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::AttentionWeights;
use crate::config::{EncoderGeometry, ModelGeometry};
use crate::error::{invalid, Error, Result};
use crate::numeric::{DenseMatrix, SeededRng};

use super::projector::{replicate_projector, Mlp, ProjectorMode, ProjectorWeights};

/// Which multimodal architecture a weight set runs as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Projected visual tokens concatenated with text, vanilla causal layers.
    BaselineEmbed,
    /// Same concatenation, but attention only updates text rows.
    PilotNaavit,
    /// Per-layer projected visual features as key/value inputs; FFNs on text only.
    Saisa,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::BaselineEmbed => "baseline",
            Self::PilotNaavit => "pilot",
            Self::Saisa => "saisa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::BaselineEmbed),
            "pilot" => Ok(Self::PilotNaavit),
            "saisa" => Ok(Self::Saisa),
            other => Err(invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// One pre-norm decoder layer with a gated SiLU FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerWeights {
    pub attn: AttentionWeights,
    /// `h x m`
    pub ffn_gate: DenseMatrix,
    /// `h x m`
    pub ffn_up: DenseMatrix,
    /// `m x h`
    pub ffn_down: DenseMatrix,
    /// `1 x h` gain
    pub norm_attn: DenseMatrix,
    /// `1 x h` gain
    pub norm_ffn: DenseMatrix,
}

impl DecoderLayerWeights {
    pub fn zeros(g: &ModelGeometry) -> Self {
        Self {
            attn: AttentionWeights::zeros(g),
            ffn_gate: DenseMatrix::zeros(g.h, g.m),
            ffn_up: DenseMatrix::zeros(g.h, g.m),
            ffn_down: DenseMatrix::zeros(g.m, g.h),
            norm_attn: DenseMatrix::zeros(1, g.h),
            norm_ffn: DenseMatrix::zeros(1, g.h),
        }
    }

    pub fn random(g: &ModelGeometry, rng: &mut SeededRng, std: f64) -> Self {
        Self {
            attn: AttentionWeights::random(g, rng, std),
            ffn_gate: rng.normal_matrix(g.h, g.m, std),
            ffn_up: rng.normal_matrix(g.h, g.m, std),
            ffn_down: rng.normal_matrix(g.m, g.h, std),
            norm_attn: DenseMatrix::filled(1, g.h, 1.0),
            norm_ffn: DenseMatrix::filled(1, g.h, 1.0),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseMatrix)>) {
        out.push((format!("{prefix}.attn.wq"), &self.attn.wq));
        out.push((format!("{prefix}.attn.wk"), &self.attn.wk));
        out.push((format!("{prefix}.attn.wv"), &self.attn.wv));
        out.push((format!("{prefix}.attn.wo"), &self.attn.wo));
        out.push((format!("{prefix}.ffn_gate"), &self.ffn_gate));
        out.push((format!("{prefix}.ffn_up"), &self.ffn_up));
        out.push((format!("{prefix}.ffn_down"), &self.ffn_down));
        out.push((format!("{prefix}.norm_attn"), &self.norm_attn));
        out.push((format!("{prefix}.norm_ffn"), &self.norm_ffn));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseMatrix)>) {
        out.push((format!("{prefix}.attn.wq"), &mut self.attn.wq));
        out.push((format!("{prefix}.attn.wk"), &mut self.attn.wk));
        out.push((format!("{prefix}.attn.wv"), &mut self.attn.wv));
        out.push((format!("{prefix}.attn.wo"), &mut self.attn.wo));
        out.push((format!("{prefix}.ffn_gate"), &mut self.ffn_gate));
        out.push((format!("{prefix}.ffn_up"), &mut self.ffn_up));
        out.push((format!("{prefix}.ffn_down"), &mut self.ffn_down));
        out.push((format!("{prefix}.norm_attn"), &mut self.norm_attn));
        out.push((format!("{prefix}.norm_ffn"), &mut self.norm_ffn));
    }
}

/// Full parameter set of a toy multimodal decoder. Also used as the
/// container for gradients, which share its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub variant: Variant,
    pub geometry: ModelGeometry,
    pub encoder: EncoderGeometry,
    pub vocab: usize,
    /// `vocab x h`
    pub embed: DenseMatrix,
    /// `h x vocab`
    pub unembed: DenseMatrix,
    pub layers: Vec<DecoderLayerWeights>,
    pub projector: ProjectorWeights,
    /// `1 x h` gain
    pub final_norm: DenseMatrix,
    /// Pilot variant only: also skip the FFN on visual rows.
    pub pilot_frozen_visual: bool,
}

impl ModelWeights {
    /// Normal(0, `std`) projections, unit norm gains, single shared projector.
    pub fn init(
        variant: Variant,
        geometry: ModelGeometry,
        encoder: EncoderGeometry,
        vocab: usize,
        std: f64,
        seed: u64,
    ) -> Result<Self> {
        geometry.check()?;
        encoder.validate()?;
        if !geometry.head_dim().is_multiple_of(2) {
            return Err(invalid("head_dim must be even for rotary positions"));
        }
        if vocab == 0 {
            return Err(invalid("vocabulary must be non-empty"));
        }
        let mut rng = SeededRng::new(seed);
        let embed = rng.normal_matrix(vocab, geometry.h, std);
        let unembed = rng.normal_matrix(geometry.h, vocab, std);
        let layers = (0..geometry.n)
            .map(|_| DecoderLayerWeights::random(&geometry, &mut rng, std))
            .collect();
        let projector = ProjectorWeights::shared(Mlp::random(encoder.d, geometry.h, &mut rng, std));
        Ok(Self {
            variant,
            geometry,
            encoder,
            vocab,
            embed,
            unembed,
            layers,
            projector,
            final_norm: DenseMatrix::filled(1, geometry.h, 1.0),
            pilot_frozen_visual: false,
        })
    }

    /// Same layout, every tensor zero.
    pub fn zeros_like(&self) -> Self {
        let g = &self.geometry;
        Self {
            variant: self.variant,
            geometry: *g,
            encoder: self.encoder,
            vocab: self.vocab,
            embed: DenseMatrix::zeros(self.vocab, g.h),
            unembed: DenseMatrix::zeros(g.h, self.vocab),
            layers: (0..g.n).map(|_| DecoderLayerWeights::zeros(g)).collect(),
            projector: ProjectorWeights {
                mode: self.projector.mode,
                layers: self
                    .projector
                    .layers
                    .iter()
                    .map(|m| Mlp::zeros(m.w1.rows(), m.w1.cols()))
                    .collect(),
            },
            final_norm: DenseMatrix::zeros(1, g.h),
            pilot_frozen_visual: self.pilot_frozen_visual,
        }
    }

    /// Replaces a shared projector by `n` identical per-layer copies.
    pub fn with_replicated_projector(mut self) -> Result<Self> {
        self.projector = replicate_projector(&self.projector, self.geometry.n)?;
        Ok(self)
    }

    /// Named tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        out.push(("embed".into(), &self.embed));
        out.push(("unembed".into(), &self.unembed));
        out.push(("final_norm".into(), &self.final_norm));
        for (i, l) in self.layers.iter().enumerate() {
            l.named(&format!("layers.{i}"), &mut out);
        }
        for (i, m) in self.projector.layers.iter().enumerate() {
            out.push((format!("projector.{i}.w1"), &m.w1));
            out.push((format!("projector.{i}.w2"), &m.w2));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = Vec::new();
        out.push(("embed".into(), &mut self.embed));
        out.push(("unembed".into(), &mut self.unembed));
        out.push(("final_norm".into(), &mut self.final_norm));
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.named_mut(&format!("layers.{i}"), &mut out);
        }
        for (i, m) in self.projector.layers.iter_mut().enumerate() {
            out.push((format!("projector.{i}.w1"), &mut m.w1));
            out.push((format!("projector.{i}.w2"), &mut m.w2));
        }
        out
    }

    pub fn projector_param_count(&self) -> usize {
        self.projector
            .layers
            .iter()
            .map(|m| m.w1.len() + m.w2.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks shapes and the variant/projector pairing.
    pub fn check(&self) -> Result<()> {
        let g = &self.geometry;
        g.check()?;
        if self.layers.len() != g.n {
            return Err(invalid(format!(
                "{} layers stored, geometry has {}",
                self.layers.len(),
                g.n
            )));
        }
        let expect = |name: &'static str, m: &DenseMatrix, shape: (usize, usize)| {
            if m.shape() == shape {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    op: name,
                    left: m.shape(),
                    right: shape,
                })
            }
        };
        expect("embed", &self.embed, (self.vocab, g.h))?;
        expect("unembed", &self.unembed, (g.h, self.vocab))?;
        expect("final_norm", &self.final_norm, (1, g.h))?;
        for l in &self.layers {
            l.attn.check(g)?;
            expect("ffn_gate", &l.ffn_gate, (g.h, g.m))?;
            expect("ffn_up", &l.ffn_up, (g.h, g.m))?;
            expect("ffn_down", &l.ffn_down, (g.m, g.h))?;
            expect("norm_attn", &l.norm_attn, (1, g.h))?;
            expect("norm_ffn", &l.norm_ffn, (1, g.h))?;
        }
        self.projector.check(self.encoder.d, g.h)?;
        match (self.variant, self.projector.mode) {
            (Variant::Saisa, ProjectorMode::PerLayer) if self.projector.layers.len() != g.n => {
                Err(invalid("per-layer projector must hold one MLP per layer"))
            }
            (Variant::BaselineEmbed | Variant::PilotNaavit, ProjectorMode::PerLayer) => Err(
                invalid("baseline and pilot variants use a single input projector"),
            ),
            _ => Ok(()),
        }
    }
}
