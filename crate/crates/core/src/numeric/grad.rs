use alloc::format;

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient of a scalar function of a matrix:
/// `(f(x + h e_ij) - f(x - h e_ij)) / 2h` for every entry.
pub fn finite_diff_grad<F>(f: F, x: &DenseMatrix, h: f64) -> Result<DenseMatrix>
where
    F: Fn(&DenseMatrix) -> f64,
{
    let mut probe = x.clone();
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    for idx in 0..x.len() {
        let orig = x.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = f(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let minus = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference probe at entry {idx}"
            )));
        }
        grad.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}
