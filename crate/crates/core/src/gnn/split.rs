use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn part_of(&self, id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.train) {
            Some("train")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

/// Partitions artboard ids by shuffling the sorted ids with `seed`. The
/// validation and test parts each get at least one artboard.
pub fn split_by_artboard(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Dataset(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let n = sorted.len();
    if n < 3 {
        return Err(Error::Dataset(format!("need at least 3 artboards to split, got {n}")));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((ratios[1] * n as f64).round() as usize).max(1);
    let n_test = ((ratios[2] * n as f64).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::Dataset(format!(
            "split ratios {ratios:?} leave no training artboards out of {n}"
        )));
    }
    let test = sorted.split_off(n - n_test);
    let val = sorted.split_off(n - n_test - n_val);
    Ok(Split {
        train: sorted,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i:03}")).collect()
    }

    #[test]
    fn ten_artboards_split_8_1_1() {
        let s = split_by_artboard(&ids(10), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn same_seed_same_split() {
        let a = split_by_artboard(&ids(30), [0.8, 0.1, 0.1], 9).unwrap();
        let mut shuffled = ids(30);
        shuffled.reverse();
        assert_eq!(a, split_by_artboard(&shuffled, [0.8, 0.1, 0.1], 9).unwrap());
        assert_ne!(a, split_by_artboard(&ids(30), [0.8, 0.1, 0.1], 10).unwrap());
    }

    #[test]
    fn too_few_artboards() {
        assert!(split_by_artboard(&ids(2), [0.8, 0.1, 0.1], 0).is_err());
        assert!(split_by_artboard(&ids(3), [0.8, 0.1, 0.1], 0).is_ok());
    }

    proptest! {
        #[test]
        fn no_artboard_in_two_splits(n in 3usize..200, seed in any::<u64>()) {
            let s = split_by_artboard(&ids(n), [0.8, 0.1, 0.1], seed).unwrap();
            let mut seen = HashSet::new();
            for id in s.train.iter().chain(&s.val).chain(&s.test) {
                prop_assert!(seen.insert(id.clone()));
            }
            prop_assert_eq!(seen.len(), n);
        }
    }
}
