use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::model::{argmax, TokenBatch};
use crate::numeric::SeededRng;

/// Mapping from a visual feature block to the target text sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// `y_j` quantizes feature 0 of visual row `j mod v` into `vocab` buckets.
    CopyIndex,
    /// `y_j = argmax_c Z[j mod v][c] mod vocab`.
    FeatureArgmax,
    /// `y_j = (seed + j) mod vocab`, independent of the image.
    Constant,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::CopyIndex => "copy-index",
            Self::FeatureArgmax => "feature-argmax",
            Self::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "copy-index" => Ok(Self::CopyIndex),
            "feature-argmax" => Ok(Self::FeatureArgmax),
            "constant" => Ok(Self::Constant),
            other => Err(invalid(format!("unknown task rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub vocab: usize,
    pub v: usize,
    pub d: usize,
    pub t: usize,
    pub rule: Rule,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.t == 0 || self.d == 0 {
            return Err(invalid("task needs vocab >= 2, t >= 1 and d >= 1"));
        }
        Ok(())
    }

    /// Applies the rule to a feature block.
    pub fn targets_for(&self, z: &crate::numeric::DenseMatrix) -> Vec<usize> {
        let v = z.rows();
        (0..self.t)
            .map(|j| match self.rule {
                Rule::Constant => (self.seed as usize).wrapping_add(j) % self.vocab,
                _ if v == 0 => 0,
                Rule::FeatureArgmax => argmax(z.row(j % v)) % self.vocab,
                Rule::CopyIndex => {
                    let x = z.get(j % v, 0);
                    let bucket = ((x + 1.0) / 2.0 * self.vocab as f64) as usize;
                    bucket.min(self.vocab - 1)
                }
            })
            .collect()
    }
}

/// Deterministic sample `step` of `task`: features in `[-1, 1]`, teacher-forced
/// inputs `[0, y_0, .., y_{t-2}]` and targets `y`.
pub fn gen_batch(task: &SyntheticTask, step: u64) -> Result<(TokenBatch, Vec<usize>)> {
    task.validate()?;
    let mut rng = SeededRng::with_stream(task.seed, step);
    let z = rng.uniform_matrix(task.v, task.d, -1.0, 1.0);
    let targets = task.targets_for(&z);
    let mut inputs = Vec::with_capacity(task.t);
    inputs.push(0);
    inputs.extend_from_slice(&targets[..task.t - 1]);
    Ok((TokenBatch::new(z, inputs)?, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::DenseMatrix;
    use alloc::vec;

    fn task(rule: Rule) -> SyntheticTask {
        SyntheticTask {
            seed: 5,
            vocab: 16,
            v: 6,
            d: 8,
            t: 5,
            rule,
        }
    }

    #[test]
    fn deterministic_per_step() {
        let t = task(Rule::FeatureArgmax);
        assert_eq!(gen_batch(&t, 3).unwrap(), gen_batch(&t, 3).unwrap());
        assert_ne!(gen_batch(&t, 3).unwrap().0.z, gen_batch(&t, 4).unwrap().0.z);
        let (b, y) = gen_batch(&t, 0).unwrap();
        assert!(b.z.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(b.text_ids[0], 0);
        assert_eq!(&b.text_ids[1..], &y[..4]);
    }

    #[test]
    fn constant_rule_ignores_features() {
        let t = task(Rule::Constant);
        let a = gen_batch(&t, 0).unwrap().1;
        let b = gen_batch(&t, 1).unwrap().1;
        assert_eq!(a, b);
        assert_eq!(a, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn feature_argmax_by_hand() {
        let t = SyntheticTask {
            v: 2,
            d: 3,
            t: 4,
            vocab: 2,
            ..task(Rule::FeatureArgmax)
        };
        let z = DenseMatrix::new(2, 3, vec![0.1, 0.9, -0.2, 0.5, -0.5, 0.7]).unwrap();
        // Row argmaxes are 1 and 2; mod 2 gives 1 and 0.
        assert_eq!(t.targets_for(&z), vec![1, 0, 1, 0]);
    }

    #[test]
    fn copy_index_buckets() {
        let t = SyntheticTask {
            v: 2,
            d: 1,
            t: 2,
            vocab: 4,
            ..task(Rule::CopyIndex)
        };
        let z = DenseMatrix::new(2, 1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(t.targets_for(&z), vec![0, 3]);
    }
}
