//! V-fold partitions of row indices.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{OdtrError, Result};
use crate::rng;

/// Fold membership of every row. Folds are numbered `0..v` internally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    v: usize,
}

impl FoldAssignment {
    /// Wraps an explicit assignment. Every fold in `0..v` must be non-empty.
    pub fn from_vec(fold_of: Vec<usize>, v: usize) -> Result<Self> {
        let mut counts = vec![0usize; v];
        for &f in &fold_of {
            if f >= v {
                return Err(OdtrError::InvalidFolds(format!("fold index {f} out of range 0..{v}")));
            }
            counts[f] += 1;
        }
        if counts.contains(&0) {
            return Err(OdtrError::InvalidFolds("every fold must contain at least one row".into()));
        }
        Ok(Self { fold_of, v })
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.v];
        for &f in &self.fold_of {
            counts[f] += 1;
        }
        counts
    }
}

/// Uniform random balanced partition of `0..n` into `v` folds, drawn from the
/// `folds` stream of `seed`.
pub fn make_folds(n: usize, v: usize, seed: u64) -> Result<FoldAssignment> {
    make_folds_from_stream(n, v, seed, rng::FOLDS, &[])
}

pub(crate) fn make_folds_from_stream(
    n: usize,
    v: usize,
    seed: u64,
    stream: &str,
    key: &[u64],
) -> Result<FoldAssignment> {
    if v < 2 {
        return Err(OdtrError::InvalidFolds(format!("need at least 2 folds, got {v}")));
    }
    if v > n {
        return Err(OdtrError::InvalidFolds(format!("{v} folds requested for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, stream, key));
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % v;
    }
    Ok(FoldAssignment { fold_of, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_row_per_fold_when_v_equals_n() {
        for seed in 0..5 {
            let f = make_folds(10, 10, seed).unwrap();
            assert!(f.sizes().iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn balanced_sizes_and_determinism() {
        let f = make_folds(10, 3, 1).unwrap();
        let mut sizes = f.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert_eq!(f, make_folds(10, 3, 1).unwrap());
    }

    #[test]
    fn rejects_bad_fold_counts() {
        assert!(make_folds(5, 6, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_rows(n in 2usize..300, v_raw in 2usize..20, seed in any::<u64>()) {
            let v = v_raw.min(n);
            let f = make_folds(n, v, seed).unwrap();
            let sizes = f.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            let lo = *sizes.iter().min().unwrap();
            let hi = *sizes.iter().max().unwrap();
            prop_assert!(lo >= 1 && hi - lo <= 1);
            for k in 0..v {
                let mut rows = f.validation_rows(k);
                rows.extend(f.training_rows(k));
                rows.sort_unstable();
                prop_assert_eq!(rows, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
