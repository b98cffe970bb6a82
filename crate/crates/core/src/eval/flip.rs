use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::EvalError;
use crate::dataset::LabeledExample;

/// Synthetic label corruption to a target training accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipSpec {
    pub target_accuracy: f64,
    pub seed: u64,
    pub num_classes: usize,
}

impl FlipSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(EvalError::InvalidTa(self.target_accuracy));
        }
        if self.num_classes < 2 {
            return Err(EvalError::InvalidLabel {
                label: self.num_classes as i64,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Labels kept intact: round(TA * N).
    pub fn kept(&self, n: usize) -> usize {
        ((self.target_accuracy * n as f64).round() as usize).min(n)
    }

    pub fn flips(&self, n: usize) -> usize {
        n - self.kept(n)
    }
}

/// Replaces the labels of `N - round(TA*N)` seeded-random examples with a
/// different label drawn uniformly from the other classes.
pub fn flip_labels(dataset: &[LabeledExample], spec: &FlipSpec) -> Result<Vec<LabeledExample>, EvalError> {
    spec.validate()?;
    for ex in dataset {
        if ex.gold < 0 || ex.gold as usize >= spec.num_classes {
            return Err(EvalError::InvalidLabel {
                label: ex.gold,
                num_classes: spec.num_classes,
            });
        }
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = dataset.to_vec();
    let mut chosen = sample(&mut rng, n, spec.flips(n)).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let original = out[i].gold;
        let draw = rng.random_range(0..spec.num_classes as i64 - 1);
        out[i].gold = if draw >= original { draw + 1 } else { draw };
    }
    Ok(out)
}
