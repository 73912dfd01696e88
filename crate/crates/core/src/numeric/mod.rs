//! Dense numeric kernels, a seeded RNG and the finite-difference oracle.

mod grad;
mod kernels;
mod matrix;
mod meter;
mod rng;

pub use grad::{finite_diff_grad, FD_STEP};
pub use kernels::{
    gelu, gelu_grad, gelu_matrix, masked_softmax_rows, matmul, matmul_metered, matmul_nt,
    matmul_tn, normal_cdf, rms_norm, rope_apply, sigmoid, silu, silu_grad, silu_matrix, RMS_EPS,
    ROPE_BASE,
};
pub(crate) use kernels::{rms_norm_backward, rope_apply_inverse, softmax_rows_backward};
pub use matrix::DenseMatrix;
pub use meter::{Component, Meter};
pub use rng::SeededRng;
