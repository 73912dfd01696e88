use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numeric::{
    gelu_grad, gelu_matrix, matmul_metered, matmul_nt, matmul_tn, Component, DenseMatrix, Meter,
    SeededRng,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectorMode {
    /// One MLP used for every layer.
    Shared,
    /// One MLP per decoder layer.
    PerLayer,
}

impl ProjectorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Shared => "shared",
            Self::PerLayer => "per-layer",
        }
    }
}

/// Two-layer MLP `gelu(Z W1) W2` with intermediate width `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `d x h`
    pub w1: DenseMatrix,
    /// `h x h`
    pub w2: DenseMatrix,
}

impl Mlp {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w1: DenseMatrix::zeros(d, h),
            w2: DenseMatrix::zeros(h, h),
        }
    }

    pub fn random(d: usize, h: usize, rng: &mut SeededRng, std: f64) -> Self {
        Self {
            w1: rng.normal_matrix(d, h, std),
            w2: rng.normal_matrix(h, h, std),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorWeights {
    pub mode: ProjectorMode,
    pub layers: Vec<Mlp>,
}

impl ProjectorWeights {
    pub fn shared(mlp: Mlp) -> Self {
        Self {
            mode: ProjectorMode::Shared,
            layers: alloc::vec![mlp],
        }
    }

    pub fn check(&self, d: usize, h: usize) -> Result<()> {
        if self.mode == ProjectorMode::Shared && self.layers.len() != 1 {
            return Err(invalid("shared projector must hold exactly one MLP"));
        }
        if self.layers.is_empty() {
            return Err(invalid("projector holds no MLP"));
        }
        for m in &self.layers {
            if m.w1.shape() != (d, h) || m.w2.shape() != (h, h) {
                return Err(Error::ShapeMismatch {
                    op: "projector",
                    left: m.w1.shape(),
                    right: (d, h),
                });
            }
        }
        Ok(())
    }

    /// Storage slot used for decoder layer `layer`.
    pub fn slot(&self, layer: usize) -> Result<usize> {
        match self.mode {
            ProjectorMode::Shared => Ok(0),
            ProjectorMode::PerLayer if layer < self.layers.len() => Ok(layer),
            ProjectorMode::PerLayer => Err(invalid(format!(
                "projector layer {layer} out of range ({} MLPs)",
                self.layers.len()
            ))),
        }
    }
}

pub(crate) struct ProjectorCache {
    pub z: DenseMatrix,
    pub pre: DenseMatrix,
    pub act: DenseMatrix,
}

/// `V_layer = gelu(Z W1) W2`. The layer index is ignored in shared mode.
pub fn project(z: &DenseMatrix, p: &ProjectorWeights, layer: usize) -> Result<DenseMatrix> {
    Ok(project_cached(z, p, layer, &mut Meter::default())?.0)
}

pub(crate) fn project_cached(
    z: &DenseMatrix,
    p: &ProjectorWeights,
    layer: usize,
    meter: &mut Meter,
) -> Result<(DenseMatrix, ProjectorCache)> {
    let mlp = &p.layers[p.slot(layer)?];
    let pre = matmul_metered(z, &mlp.w1, meter, Component::Projector)?;
    let act = gelu_matrix(&pre);
    let out = matmul_metered(&act, &mlp.w2, meter, Component::Projector)?;
    Ok((
        out,
        ProjectorCache {
            z: z.clone(),
            pre,
            act,
        },
    ))
}

/// Gradients of one MLP given `d_out` for its output.
pub(crate) fn project_backward(
    d_out: &DenseMatrix,
    cache: &ProjectorCache,
    mlp: &Mlp,
) -> Result<Mlp> {
    let w2 = matmul_tn(&cache.act, d_out)?;
    let d_act = matmul_nt(d_out, &mlp.w2)?;
    let d_pre = d_act.hadamard(&cache.pre.map(gelu_grad))?;
    let w1 = matmul_tn(&cache.z, &d_pre)?;
    Ok(Mlp { w1, w2 })
}

/// `n` independent copies of a shared projector.
pub fn replicate_projector(p: &ProjectorWeights, n: usize) -> Result<ProjectorWeights> {
    if p.mode != ProjectorMode::Shared {
        return Err(invalid("only a shared projector can be replicated"));
    }
    if n == 0 {
        return Err(invalid("replication count must be positive"));
    }
    Ok(ProjectorWeights {
        mode: ProjectorMode::PerLayer,
        layers: (0..n).map(|_| p.layers[0].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gelu, matmul};

    #[test]
    fn zero_features_project_to_zero() {
        let mut rng = SeededRng::new(3);
        let p = ProjectorWeights::shared(Mlp::random(8, 16, &mut rng, 0.5));
        let out = project(&DenseMatrix::zeros(6, 8), &p, 0).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_mode_ignores_layer_index() {
        let mut rng = SeededRng::new(4);
        let p = ProjectorWeights::shared(Mlp::random(8, 16, &mut rng, 0.5));
        let z = rng.uniform_matrix(6, 8, -1.0, 1.0);
        let a = project(&z, &p, 0).unwrap();
        for layer in [1, 5, 1000] {
            assert!(project(&z, &p, layer).unwrap().bitwise_eq(&a));
        }
    }

    #[test]
    fn matches_hand_composition() {
        let mut rng = SeededRng::new(7);
        let mlp = Mlp::random(8, 16, &mut rng, 0.5);
        let z = rng.uniform_matrix(6, 8, -1.0, 1.0);
        let p = ProjectorWeights::shared(mlp.clone());
        let mut hidden = matmul(&z, &mlp.w1).unwrap();
        for x in hidden.as_mut_slice() {
            *x = gelu(*x);
        }
        let expect = matmul(&hidden, &mlp.w2).unwrap();
        assert!(project(&z, &p, 0).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn replication_copies_and_guards() {
        let mut rng = SeededRng::new(9);
        let p = ProjectorWeights::shared(Mlp::random(8, 16, &mut rng, 0.5));
        let r = replicate_projector(&p, 2).unwrap();
        assert_eq!(r.mode, ProjectorMode::PerLayer);
        assert!(r.layers.iter().all(|m| m == &p.layers[0]));
        let z = rng.uniform_matrix(3, 8, -1.0, 1.0);
        let a = project(&z, &r, 0).unwrap();
        assert!(project(&z, &r, 1).unwrap().bitwise_eq(&a));
        assert!(project(&z, &r, 2).is_err());
        assert!(replicate_projector(&r, 2).is_err());
    }
}
