//! Toy multimodal decoders: the embedding-space baseline, the pilot NAAViT
//! variant and SAISA, with hand-derived gradients.
//!
//! Layers are pre-norm (RMS) with residuals around attention and a gated
//! SiLU FFN. Visual tokens take positions `0..v`, text `v..v+t`. In SAISA the
//! per-layer projected rows `V_i` enter the key/value projections without the
//! layer's input norm, and only text rows reach the FFN and the unembedding.

mod forward;
mod gradcheck;
mod layer;
mod projector;
mod weights;

pub use forward::{
    backward, cross_entropy, forward, forward_metered, greedy_next, loss, ForwardTrace, TokenBatch,
};
pub(crate) use forward::argmax;
pub use gradcheck::{check_gradients, TensorGradCheck, GRAD_CHECK_FLOOR};
pub use layer::saisa_layer_forward;
pub use projector::{project, replicate_projector, Mlp, ProjectorMode, ProjectorWeights};
pub use weights::{DecoderLayerWeights, ModelWeights, Variant};
