use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

/// Content-disjoint `k`-fold split. Contents are shuffled once; the test
/// size is `round(n·test/(train+test))`, folds `0..k−1` take consecutive
/// test groups of that size and the last fold takes the remainder, so each
/// content is tested exactly once.
pub fn kfold_split(contents: &[u32], k: usize, ratio: (u32, u32), seed: u64) -> Result<Vec<FoldSplit>> {
    let n = contents.len();
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Config(format!("train:test ratio must be positive, got {}:{}", ratio.0, ratio.1)));
    }
    let mut sorted = contents.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("content ids must be distinct".into()));
    }
    let test_size = ((n as f64) * ratio.1 as f64 / (ratio.0 + ratio.1) as f64).round() as usize;
    if test_size == 0 || k * test_size < n || (k - 1) * test_size >= n {
        return Err(Error::Config(format!(
            "{n} contents cannot be covered by {k} folds of {test_size} test contents at {}:{}",
            ratio.0, ratio.1
        )));
    }
    let mut order = contents.to_vec();
    order.shuffle(&mut rng_from(seed));
    Ok((0..k)
        .map(|f| {
            let start = f * test_size;
            let end = if f == k - 1 { n } else { start + test_size };
            let test = order[start..end].to_vec();
            let train = order.iter().copied().filter(|c| !test.contains(c)).collect();
            FoldSplit { fold_id: f, train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn check_partition(folds: &[FoldSplit], contents: &[u32]) {
        let mut seen = BTreeSet::new();
        for f in folds {
            assert!(f.test.iter().all(|c| !f.train.contains(c)));
            assert_eq!(f.train.len() + f.test.len(), contents.len());
            for c in &f.test {
                assert!(seen.insert(*c), "content {c} tested twice");
            }
        }
        assert_eq!(seen, contents.iter().copied().collect());
    }

    #[test]
    fn nine_contents_seven_to_two() {
        let contents: Vec<u32> = (0..9).collect();
        let folds = kfold_split(&contents, 5, (7, 2), 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![2, 2, 2, 2, 1]);
        check_partition(&folds, &contents);
    }

    #[test]
    fn twenty_contents_four_to_one() {
        let contents: Vec<u32> = (100..120).collect();
        let folds = kfold_split(&contents, 5, (4, 1), 3).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 4));
        check_partition(&folds, &contents);
    }

    #[test]
    fn impossible_coverage_is_a_config_error() {
        let contents: Vec<u32> = (0..30).collect();
        assert!(kfold_split(&contents, 2, (4, 1), 0).unwrap_err().is_config());
        assert!(kfold_split(&contents[..3], 5, (4, 1), 0).unwrap_err().is_config());
        assert!(kfold_split(&contents, 1, (4, 1), 0).is_err());
        assert!(kfold_split(&[1, 1, 2, 3, 4], 5, (4, 1), 0).is_err());
    }

    proptest! {
        #[test]
        fn deterministic_and_disjoint(seed in 0u64..10_000, n in 8usize..40) {
            let contents: Vec<u32> = (0..n as u32).collect();
            let k = 4;
            let ts = (n as f64 / 4.0).round() as usize;
            prop_assume!(k * ts >= n && (k - 1) * ts < n);
            let a = kfold_split(&contents, k, (3, 1), seed).unwrap();
            prop_assert_eq!(&a, &kfold_split(&contents, k, (3, 1), seed).unwrap());
            check_partition(&a, &contents);
        }
    }
}
