use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::numeric::DenseMatrix;

use super::stages::TrainableSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: DenseMatrix,
    pub v: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// One bias-corrected Adam update of every trainable tensor of `params`.
///
/// All gradients are checked for finiteness before anything is modified.
pub fn optimizer_step(
    params: &mut ModelWeights,
    grads: &ModelWeights,
    state: &mut AdamState,
    cfg: &AdamConfig,
    trainable: TrainableSet,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for (name, g) in &grad_tensors {
        if trainable.includes(name) && !g.all_finite() {
            return Err(Error::NonFinite(alloc::format!("gradient of `{name}`")));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for ((name, p), (gname, g)) in params.tensors_mut().into_iter().zip(&grad_tensors) {
        debug_assert_eq!(&name, gname);
        if !trainable.includes(&name) {
            continue;
        }
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        let mom = state.moments.entry(name).or_insert_with(|| Moments {
            m: DenseMatrix::zeros(p.rows(), p.cols()),
            v: DenseMatrix::zeros(p.rows(), p.cols()),
        });
        let ps = p.as_mut_slice();
        let ms = mom.m.as_mut_slice();
        let vs = mom.v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * gi;
            vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            ps[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PresetRegistry;
    use crate::model::Variant;

    fn toy_weights() -> ModelWeights {
        let r = PresetRegistry::builtin();
        ModelWeights::init(
            Variant::Saisa,
            r.llm("toy").unwrap(),
            r.encoder("toy").unwrap(),
            16,
            0.02,
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradients_leave_parameters_and_decay_moments() {
        let mut w = toy_weights();
        let before = w.clone();
        let zeros = w.zeros_like();
        let mut state = AdamState::default();
        let cfg = AdamConfig::with_lr(1e-2);
        optimizer_step(&mut w, &zeros, &mut state, &cfg, TrainableSet::All).unwrap();
        assert_eq!(w, before);

        let mut m = state.moments["embed"].clone();
        m.m.as_mut_slice()[0] = 1.0;
        m.v.as_mut_slice()[0] = 4.0;
        state.moments.insert("embed".into(), m);
        optimizer_step(&mut w, &zeros, &mut state, &cfg, TrainableSet::All).unwrap();
        let m = &state.moments["embed"];
        assert_eq!(m.m.as_slice()[0], 0.9);
        assert_eq!(m.v.as_slice()[0], 4.0 * 0.999);
    }

    #[test]
    fn two_scalar_steps_by_hand() {
        let mut w = toy_weights();
        let p0 = w.embed.get(0, 0);
        let (g1, g2) = (0.5, -1.25);
        let cfg = AdamConfig::with_lr(0.1);
        let mut state = AdamState::default();
        for g in [g1, g2] {
            let mut grads = w.zeros_like();
            grads.embed.set(0, 0, g);
            optimizer_step(&mut w, &grads, &mut state, &cfg, TrainableSet::All).unwrap();
        }
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let p1 = p0 - 0.1 * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let bc1 = 1.0 - 0.9f64 * 0.9;
        let bc2 = 1.0 - 0.999f64 * 0.999;
        let p2 = p1 - 0.1 * (m2 / bc1) / ((v2 / bc2).sqrt() + 1e-8);
        assert!((w.embed.get(0, 0) - p2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_named_and_nothing_changes() {
        let mut w = toy_weights();
        let before = w.clone();
        let mut grads = w.zeros_like();
        grads.layers[1].ffn_up.set(0, 0, f64::NAN);
        let mut state = AdamState::default();
        let err = optimizer_step(
            &mut w,
            &grads,
            &mut state,
            &AdamConfig::with_lr(1e-2),
            TrainableSet::All,
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFinite("gradient of `layers.1.ffn_up`".into()));
        assert_eq!(w, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let mut w = toy_weights();
        let before = w.clone();
        let mut grads = w.zeros_like();
        for (_, g) in grads.tensors_mut() {
            for x in g.as_mut_slice() {
                *x = 1.0;
            }
        }
        let mut state = AdamState::default();
        optimizer_step(
            &mut w,
            &grads,
            &mut state,
            &AdamConfig::with_lr(1e-2),
            TrainableSet::ProjectorOnly,
        )
        .unwrap();
        for ((name, a), (_, b)) in w.tensors().iter().zip(before.tensors()) {
            assert_eq!(name.starts_with("projector."), !a.bitwise_eq(b), "{name}");
        }
    }
}
