use alloc::format;
use alloc::vec::Vec;

use super::matrix::DenseMatrix;
use super::meter::{Component, Meter};
use crate::attention::AttentionMask;
use crate::error::{invalid, Error, Result};

pub const RMS_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10_000.0;

/// Plain matrix product.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, inner, p) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(n, p);
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (kk, &aik) in arow.iter().enumerate().take(inner) {
            let brow = b.row(kk);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Matrix product that records `2 * a.rows * a.cols * b.cols` FLOPs under `component`.
pub fn matmul_metered(
    a: &DenseMatrix,
    b: &DenseMatrix,
    meter: &mut Meter,
    component: Component,
) -> Result<DenseMatrix> {
    let out = matmul(a, b)?;
    meter.record(component, 2 * (a.rows() * a.cols() * b.cols()) as u64);
    Ok(out)
}

/// `a^T b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &ari) in arow.iter().enumerate() {
            let orow = out.row_mut(i);
            for (o, &brj) in orow.iter_mut().zip(brow) {
                *o += ari * brj;
            }
        }
    }
    Ok(out)
}

/// `a b^T` without materializing the transpose.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(DenseMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum()
    }))
}

/// Row-wise softmax of `scale * scores` restricted to the entries `mask` allows.
///
/// Disallowed entries get exactly zero weight. A row with no allowed entry
/// is rejected.
pub fn masked_softmax_rows(
    scores: &DenseMatrix,
    mask: &AttentionMask,
    scale: f64,
) -> Result<DenseMatrix> {
    if scores.shape() != (mask.query_len(), mask.key_len()) {
        return Err(Error::ShapeMismatch {
            op: "masked_softmax_rows",
            left: scores.shape(),
            right: (mask.query_len(), mask.key_len()),
        });
    }
    if !(scale > 0.0) {
        return Err(invalid(format!("softmax scale must be positive, got {scale}")));
    }
    let mut out = DenseMatrix::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        let allow = mask.row(i);
        let row = scores.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, &s) in row.iter().enumerate() {
            if allow[j] {
                max = max.max(s * scale);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMaskedRow { row: i });
        }
        let orow = out.row_mut(i);
        let mut total = 0.0;
        for (j, &s) in row.iter().enumerate() {
            if allow[j] {
                let e = libm::exp(s * scale - max);
                orow[j] = e;
                total += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    Ok(out)
}

/// Backward of a row softmax: `dS = P * (dP - rowsum(dP * P))`.
pub(crate) fn softmax_rows_backward(probs: &DenseMatrix, d_probs: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = d_probs.row(i);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (o, (&pj, &dpj)) in out.row_mut(i).iter_mut().zip(p.iter().zip(dp)) {
            *o = pj * (dpj - dot);
        }
    }
    out
}

fn check_gain(x: &DenseMatrix, gain: &[f64]) -> Result<()> {
    if gain.len() != x.cols() {
        return Err(Error::ShapeMismatch {
            op: "rms_norm",
            left: x.shape(),
            right: (1, gain.len()),
        });
    }
    Ok(())
}

/// Divides each row by `sqrt(mean(x^2) + 1e-6)` and scales by `gain`.
pub fn rms_norm(x: &DenseMatrix, gain: &[f64]) -> Result<DenseMatrix> {
    check_gain(x, gain)?;
    let mut out = x.clone();
    for i in 0..x.rows() {
        let r = row_rms(x.row(i));
        for (o, g) in out.row_mut(i).iter_mut().zip(gain) {
            *o = *o / r * g;
        }
    }
    Ok(out)
}

fn row_rms(row: &[f64]) -> f64 {
    let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
    libm::sqrt(ms + RMS_EPS)
}

/// Returns `(dx, dgain)` for `y = rms_norm(x, gain)` given `dy`.
pub(crate) fn rms_norm_backward(
    x: &DenseMatrix,
    gain: &[f64],
    dy: &DenseMatrix,
) -> (DenseMatrix, Vec<f64>) {
    let cols = x.cols();
    let mut dx = DenseMatrix::zeros(x.rows(), cols);
    let mut dgain = alloc::vec![0.0; cols];
    for i in 0..x.rows() {
        let xr = x.row(i);
        let dyr = dy.row(i);
        let r = row_rms(xr);
        let mut dot = 0.0;
        for j in 0..cols {
            dot += dyr[j] * gain[j] * xr[j];
            dgain[j] += dyr[j] * xr[j] / r;
        }
        let coef = dot / (cols as f64 * r * r * r);
        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
            *d = dyr[j] * gain[j] / r - xr[j] * coef;
        }
    }
    (dx, dgain)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    normal_cdf(x) + x * pdf
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn gelu_matrix(x: &DenseMatrix) -> DenseMatrix {
    x.map(gelu)
}

pub fn silu_matrix(x: &DenseMatrix) -> DenseMatrix {
    x.map(silu)
}

/// Rotary position embedding: within every head of width `head_dim`, the
/// pair `(2i, 2i+1)` of row `r` is rotated by `positions[r] * base^(-2i/head_dim)`.
pub fn rope_apply(
    x: &DenseMatrix,
    positions: &[usize],
    head_dim: usize,
    base: f64,
) -> Result<DenseMatrix> {
    rope_rotate(x, positions, head_dim, base, 1.0)
}

/// Inverse (equivalently transpose) of [`rope_apply`].
pub(crate) fn rope_apply_inverse(
    x: &DenseMatrix,
    positions: &[usize],
    head_dim: usize,
    base: f64,
) -> Result<DenseMatrix> {
    rope_rotate(x, positions, head_dim, base, -1.0)
}

fn rope_rotate(
    x: &DenseMatrix,
    positions: &[usize],
    head_dim: usize,
    base: f64,
    direction: f64,
) -> Result<DenseMatrix> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        return Err(invalid(format!("rope head_dim must be even and positive, got {head_dim}")));
    }
    if !x.cols().is_multiple_of(head_dim) {
        return Err(invalid(format!(
            "rope: {} columns not divisible by head_dim {head_dim}",
            x.cols()
        )));
    }
    if positions.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "rope_apply",
            left: x.shape(),
            right: (positions.len(), 1),
        });
    }
    let half = head_dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| libm::pow(base, -2.0 * i as f64 / head_dim as f64))
        .collect();
    let mut out = x.clone();
    for (r, &pos) in positions.iter().enumerate() {
        if pos == 0 {
            continue;
        }
        let row = out.row_mut(r);
        for head in row.chunks_exact_mut(head_dim) {
            for (i, &f) in freqs.iter().enumerate() {
                let angle = direction * pos as f64 * f;
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * c - b * s;
                head[2 * i + 1] = a * s + b * c;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{build_causal_mask, AttentionMask};
    use crate::numeric::SeededRng;
    use alloc::vec;

    fn triple_loop(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_scalar_and_identity() {
        let a = DenseMatrix::new(1, 1, vec![2.0]).unwrap();
        let b = DenseMatrix::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[6.0]);

        let mut rng = SeededRng::new(3);
        let m = rng.uniform_matrix(4, 5, -2.0, 2.0);
        assert!(matmul(&DenseMatrix::identity(4), &m).unwrap().bitwise_eq(&m));
        let sq = rng.uniform_matrix(4, 4, -2.0, 2.0);
        assert!(matmul(&sq, &DenseMatrix::identity(4)).unwrap().bitwise_eq(&sq));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        let a = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let b = rng.uniform_matrix(4, 2, -1.0, 1.0);
        let got = matmul(&a, &b).unwrap();
        assert!(got.max_abs_diff(&triple_loop(&a, &b)) < 1e-12);
        assert!(matmul_tn(&a.transpose(), &b).unwrap().max_abs_diff(&got) < 1e-12);
        assert!(matmul_nt(&a, &b.transpose()).unwrap().max_abs_diff(&got) < 1e-12);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
    }

    #[test]
    fn metered_matmul_counts_macs() {
        let mut meter = Meter::default();
        matmul_metered(
            &DenseMatrix::zeros(3, 4),
            &DenseMatrix::zeros(4, 5),
            &mut meter,
            Component::Ffn,
        )
        .unwrap();
        assert_eq!(meter.ffn, 2 * 3 * 4 * 5);
        assert_eq!(meter.total(), 120);
    }

    #[test]
    fn softmax_degenerate_and_uniform() {
        let mask = build_causal_mask(3).unwrap();
        let scores = DenseMatrix::filled(3, 3, 0.7);
        let p = masked_softmax_rows(&scores, &mask, 0.5).unwrap();
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
        assert!((p.get(1, 0) - 0.5).abs() < 1e-15 && (p.get(1, 1) - 0.5).abs() < 1e-15);
        for j in 0..3 {
            assert!((p.get(2, j) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_hand_computation() {
        let scores = DenseMatrix::new(2, 3, vec![0.3, -1.2, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let mask =
            AttentionMask::from_allow(2, 3, vec![true, false, true, true, true, false]).unwrap();
        let scale = 0.8;
        let p = masked_softmax_rows(&scores, &mask, scale).unwrap();
        let e = |x: f64| libm::exp(x * scale);
        let z0 = e(0.3) + e(2.0);
        let z1 = e(1.5) + e(0.25);
        let expect = [e(0.3) / z0, 0.0, e(2.0) / z0, e(1.5) / z1, e(0.25) / z1, 0.0];
        for (g, x) in p.as_slice().iter().zip(expect) {
            assert!((g - x).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_fully_masked_rows() {
        let mask = AttentionMask::from_allow(2, 2, vec![true, false, false, false]).unwrap();
        let err = masked_softmax_rows(&DenseMatrix::zeros(2, 2), &mask, 1.0).unwrap_err();
        assert_eq!(err, Error::FullyMaskedRow { row: 1 });
    }

    #[test]
    fn rms_norm_cases() {
        let c = -3.0;
        let x = DenseMatrix::filled(1, 4, c);
        let y = rms_norm(&x, &[1.0; 4]).unwrap();
        let expect = -(3.0 / libm::sqrt(9.0 + 1e-6));
        assert!(y.as_slice().iter().all(|&v| (v - expect).abs() < 1e-15));

        let z = rms_norm(&DenseMatrix::zeros(2, 4), &[1.0; 4]).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));

        let mut rng = SeededRng::new(5);
        let x = rng.uniform_matrix(1, 6, -1.0, 1.0);
        let gain = [0.5, 1.0, 1.5, 2.0, -1.0, 0.1];
        let y = rms_norm(&x, &gain).unwrap();
        let row = x.row(0);
        let mut ms = 0.0;
        for v in row {
            ms += v * v;
        }
        let r = (ms / 6.0 + 1e-6).sqrt();
        for j in 0..6 {
            assert!((y.get(0, j) - row[j] / r * gain[j]).abs() < 1e-12);
        }
        assert!(rms_norm(&x, &[1.0; 3]).is_err());
    }

    /// Maclaurin series for erf, adequate for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..80 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / core::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn activations() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(silu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        let phi1 = 0.5 * (1.0 + erf_series(1.0 / core::f64::consts::SQRT_2));
        assert!((gelu(1.0) - phi1).abs() < 1e-10);
        assert!((silu(2.0) - 2.0 / (1.0 + libm::exp(-2.0))).abs() < 1e-15);
    }

    #[test]
    fn activation_grads_match_central_differences() {
        for &x in &[-2.5, -0.3, 0.0, 0.7, 3.1] {
            let h = 1e-6;
            let fd_g = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            let fd_s = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd_g).abs() < 1e-8);
            assert!((silu_grad(x) - fd_s).abs() < 1e-8);
        }
    }

    #[test]
    fn rope_identity_at_zero_and_hand_rotation() {
        let mut rng = SeededRng::new(9);
        let x = rng.uniform_matrix(3, 8, -1.0, 1.0);
        let y = rope_apply(&x, &[0, 0, 0], 4, ROPE_BASE).unwrap();
        assert!(y.bitwise_eq(&x));

        let x = DenseMatrix::new(1, 2, vec![0.6, -0.8]).unwrap();
        let y = rope_apply(&x, &[1], 2, ROPE_BASE).unwrap();
        let (s, c) = (libm::sin(1.0), libm::cos(1.0));
        assert!((y.get(0, 0) - (0.6 * c + 0.8 * s)).abs() < 1e-15);
        assert!((y.get(0, 1) - (0.6 * s - 0.8 * c)).abs() < 1e-15);
    }

    #[test]
    fn rope_preserves_pair_norms_and_inverts() {
        let mut rng = SeededRng::new(21);
        let x = rng.uniform_matrix(5, 12, -1.0, 1.0);
        let pos = [0, 3, 7, 100, 4096];
        let y = rope_apply(&x, &pos, 6, ROPE_BASE).unwrap();
        for r in 0..5 {
            for p in 0..6 {
                let n0 = x.get(r, 2 * p).powi(2) + x.get(r, 2 * p + 1).powi(2);
                let n1 = y.get(r, 2 * p).powi(2) + y.get(r, 2 * p + 1).powi(2);
                assert!((n0 - n1).abs() < 1e-12);
            }
        }
        let back = rope_apply_inverse(&y, &pos, 6, ROPE_BASE).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn rope_rejects_odd_head_dim() {
        assert!(rope_apply(&DenseMatrix::zeros(1, 6), &[1], 3, ROPE_BASE).is_err());
    }

    #[test]
    fn rms_norm_backward_matches_fd() {
        let mut rng = SeededRng::new(2);
        let x = rng.uniform_matrix(2, 5, -1.0, 1.0);
        let gain = [0.9, 1.1, -0.4, 2.0, 0.3];
        let w = rng.uniform_matrix(2, 5, -1.0, 1.0);
        let f = |x: &DenseMatrix| rms_norm(x, &gain).unwrap().hadamard(&w).unwrap().sum();
        let (dx, _) = rms_norm_backward(&x, &gain, &w);
        let fd = crate::numeric::finite_diff_grad(f, &x, 1e-6).unwrap();
        assert!(dx.max_abs_diff(&fd) < 1e-8);
    }
}
