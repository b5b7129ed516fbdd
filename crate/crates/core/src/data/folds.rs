use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FOLDS: usize = 10;
pub const MIN_SAMPLES: usize = 20;

/// Index sets for one rotation of the 10-fold protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Unbiased draw from `[0, bound)`.
fn below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Fisher–Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(&mut rng, i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Fold `i` validates on slice `i` of the shuffled order and tests on slice
/// `i + 1`, wrapping to slice 0 at the last fold. Slices hold `⌊N/10⌋`
/// samples; the `N mod 10` leftovers always train.
pub fn make_folds(n: usize, seed: u64) -> Result<Vec<FoldSpec>> {
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples { n, min: MIN_SAMPLES });
    }
    let order = shuffled_indices(n, seed);
    let k = n / NUM_FOLDS;
    let slice = |s: usize| s * k..(s + 1) * k;
    Ok((0..NUM_FOLDS)
        .map(|i| {
            let (v, t) = (slice(i), slice((i + 1) % NUM_FOLDS));
            let train = (0..n).filter(|p| !v.contains(p) && !t.contains(p)).map(|p| order[p]).collect();
            FoldSpec { fold_index: i, train, val: order[v].to_vec(), test: order[t].to_vec() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_follow_rotation() {
        let order = shuffled_indices(100, 5);
        let folds = make_folds(100, 5).unwrap();
        let at = |r: std::ops::Range<usize>| -> Vec<usize> { order[r].to_vec() };
        assert_eq!(folds[9].val, at(90..100));
        assert_eq!(folds[9].test, at(0..10));
        assert_eq!(folds[9].train, at(10..90));
        assert_eq!(folds[0].val, at(0..10));
        assert_eq!(folds[0].test, at(10..20));
        assert_eq!(folds[0].train, at(20..100));
    }

    #[test]
    fn every_index_validates_and_tests_once() {
        let folds = make_folds(100, 1).unwrap();
        let mut val: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
        let mut test: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        val.sort_unstable();
        test.sort_unstable();
        assert_eq!(val, (0..100).collect::<Vec<_>>());
        assert_eq!(test, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn remainder_trains() {
        let folds = make_folds(27, 3).unwrap();
        for f in &folds {
            assert_eq!(f.val.len(), 2);
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.train.len(), 23);
        }
    }

    #[test]
    fn too_few() {
        assert_eq!(make_folds(19, 0).unwrap_err().class(), "too-few-samples");
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bound in [1u64, 2, 3, 7, 1000] {
            for _ in 0..200 {
                assert!(below(&mut rng, bound) < bound);
            }
        }
    }
}
