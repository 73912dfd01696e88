use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has no allowed entries in the attention mask")]
    FullyMaskedRow { row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("preset `{id}` is invalid: {reason}")]
    InvalidPreset { id: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("stage regression: checkpoint is at {from}, cannot run {to}")]
    StageRegression { from: &'static str, to: &'static str },
    #[error("size guard exceeded: {flops} FLOPs > {limit}")]
    GuardExceeded { flops: u64, limit: u64 },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
