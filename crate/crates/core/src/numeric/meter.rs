/// Bucket a metered matrix product is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    /// Query, key, value and output projections.
    QkvoProj,
    /// Score (`QK^T`) and weighted-value (`PV`) products.
    AttentionScores,
    /// Gate, up and down FFN products.
    Ffn,
    /// Visual projector MLPs.
    Projector,
}

/// Per-invocation FLOP counter. Each multiply-accumulate counts as 2 FLOPs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Meter {
    pub qkvo_proj: u64,
    pub attention_scores: u64,
    pub ffn: u64,
    pub projector: u64,
}

impl Meter {
    pub fn record(&mut self, component: Component, flops: u64) {
        let slot = match component {
            Component::QkvoProj => &mut self.qkvo_proj,
            Component::AttentionScores => &mut self.attention_scores,
            Component::Ffn => &mut self.ffn,
            Component::Projector => &mut self.projector,
        };
        *slot += flops;
    }

    pub fn total(&self) -> u64 {
        self.qkvo_proj + self.attention_scores + self.ffn + self.projector
    }
}
