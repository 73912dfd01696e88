use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::forward::{backward, loss, TokenBatch};
use super::weights::ModelWeights;

/// Entries whose finite difference is at or below this magnitude are skipped
/// when computing relative errors.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Finite-difference comparison for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGradCheck {
    pub name: String,
    pub entries: usize,
    /// Entries above the floor that took part in the comparison.
    pub compared: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compares [`backward`] against central differences of [`loss`] for every
/// tensor selected by `include`.
///
/// Relative error is `|a - fd| / max(|a|, |fd|)`.
pub fn check_gradients(
    w: &ModelWeights,
    batch: &TokenBatch,
    targets: &[usize],
    include: impl Fn(&str) -> bool,
    step: f64,
) -> Result<Vec<TensorGradCheck>> {
    let (_, analytic) = backward(w, batch, targets)?;
    let analytic = analytic.tensors();
    let mut probe = w.clone();
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        if !include(name) {
            continue;
        }
        let mut report = TensorGradCheck {
            name: name.clone(),
            entries: a.len(),
            compared: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for idx in 0..a.len() {
            let orig = probe.tensors()[ti].1.as_slice()[idx];
            let mut eval = |x: f64| -> Result<f64> {
                probe.tensors_mut()[ti].1.as_mut_slice()[idx] = x;
                loss(&probe, batch, targets)
            };
            let p2 = eval(orig + 2.0 * step)?;
            let p1 = eval(orig + step)?;
            let m1 = eval(orig - step)?;
            let m2 = eval(orig - 2.0 * step)?;
            probe.tensors_mut()[ti].1.as_mut_slice()[idx] = orig;
            if ![p2, p1, m1, m2].iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(alloc::format!("probe of `{name}`[{idx}]")));
            }
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let an = a.as_slice()[idx];
            let abs = libm::fabs(an - fd);
            report.max_abs_error = report.max_abs_error.max(abs);
            if libm::fabs(fd) > GRAD_CHECK_FLOOR {
                report.compared += 1;
                let rel = abs / libm::fabs(an).max(libm::fabs(fd));
                report.max_rel_error = report.max_rel_error.max(rel);
            }
        }
        out.push(report);
    }
    Ok(out)
}
