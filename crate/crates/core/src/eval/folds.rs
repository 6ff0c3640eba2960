use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fold assignment for one seed, aligned with the input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn valid_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    /// `(positives, negatives)` per fold.
    pub fn class_counts(&self, labels: &[bool]) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); self.k];
        for (&f, &y) in self.assignments.iter().zip(labels) {
            if y {
                out[f].0 += 1;
            } else {
                out[f].1 += 1;
            }
        }
        out
    }
}

/// Shuffles each class with its own seeded stream and deals it round-robin.
/// Negatives start where the positives stopped, so fold sizes also differ by
/// at most one.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be at least 2, got {k}")));
    }
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for (stream, class) in [(0u64, true), (1u64, false)] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::InsufficientTrainingData(format!(
                "{} {} subjects cannot fill {k} folds",
                members.len(),
                if class { "positive" } else { "negative" }
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        members.shuffle(&mut rng);
        for i in members {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}

/// Shuffled copy of `labels`; the stream is distinct from the fold streams.
pub fn permute_labels(labels: &[bool], seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut out = labels.to_vec();
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cohort_labels() -> Vec<bool> {
        let mut y = vec![true; 58];
        y.extend(vec![false; 198]);
        y
    }

    #[test]
    fn cohort_sized_fold_counts() {
        let y = cohort_labels();
        let plan = stratified_kfold(&y, 5, 0).unwrap();
        for (p, n) in plan.class_counts(&y) {
            assert!((11..=12).contains(&p), "{p}");
            assert!((39..=40).contains(&n), "{n}");
        }
        assert_eq!(plan, stratified_kfold(&y, 5, 0).unwrap());
        assert_ne!(plan, stratified_kfold(&y, 5, 1).unwrap());
    }

    #[test]
    fn tiny_plan() {
        let y = [true, true, false, false];
        let plan = stratified_kfold(&y, 2, 9).unwrap();
        assert_eq!(plan.class_counts(&y), vec![(1, 1), (1, 1)]);
        assert!(stratified_kfold(&y, 3, 9).is_err());
        assert!(stratified_kfold(&y, 1, 9).is_err());
    }

    #[test]
    fn permutation_keeps_counts() {
        let y = cohort_labels();
        let p = permute_labels(&y, 3);
        assert_eq!(p.iter().filter(|b| **b).count(), 58);
        assert_ne!(p, y);
        assert_eq!(p, permute_labels(&y, 3));
    }

    proptest! {
        #[test]
        fn stratified(seed in any::<u64>(), pos in 5usize..40, neg in 5usize..80, k in 2usize..6) {
            let mut y = vec![true; pos];
            y.extend(vec![false; neg]);
            let plan = stratified_kfold(&y, k, seed).unwrap();
            let counts = plan.class_counts(&y);
            let ps: Vec<usize> = counts.iter().map(|c| c.0).collect();
            let sizes: Vec<usize> = counts.iter().map(|c| c.0 + c.1).collect();
            prop_assert!(ps.iter().max().unwrap() - ps.iter().min().unwrap() <= 1);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(sizes.iter().sum::<usize>(), pos + neg);
        }
    }
}
