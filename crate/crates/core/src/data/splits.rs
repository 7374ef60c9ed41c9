//! Deterministic train/val/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Partition `image_ids` by the given `(train, val, test)` ratios.
///
/// Sizes are floor(ratio * n) for val and test with the remainder assigned
/// to train. The shuffle is seeded, so identical inputs give identical
/// partitions.
pub fn make_splits(
    image_ids: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits> {
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(Error::config("split ratios must all be positive"));
    }
    let sum = r_train + r_val + r_test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    let mut ids: Vec<String> = image_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_val = (r_val * n as f64).floor() as usize;
    let n_test = (r_test * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;

    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..].to_vec();
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn eighty_ten_ten_on_hundred_ids() {
        let s = make_splits(&ids(100), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 10);
    }

    #[test]
    fn same_seed_same_partition() {
        let a = make_splits(&ids(100), (0.8, 0.1, 0.1), 7).unwrap();
        let b = make_splits(&ids(100), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(make_splits(&ids(10), (0.5, 0.5, 0.5), 0).is_err());
        assert!(make_splits(&ids(10), (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = make_splits(&ids(11), (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.train.len(), 9);
    }

    proptest::proptest! {
        #[test]
        fn partition_is_disjoint_and_exhaustive(n in 3usize..200, seed in 0u64..1000) {
            let all = ids(n);
            let s = make_splits(&all, (0.8, 0.1, 0.1), seed).unwrap();
            let mut seen: HashSet<&String> = HashSet::new();
            for id in s.train.iter().chain(&s.val).chain(&s.test) {
                proptest::prop_assert!(seen.insert(id), "duplicate id {}", id);
            }
            proptest::prop_assert_eq!(seen.len(), n);
        }
    }
}
