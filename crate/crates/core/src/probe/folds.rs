use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ProbeError;

/// Assignment of whole minimal pairs to cross-validation folds.
///
/// Both sentences of a pair always land in the same fold, and fold sizes
/// differ by at most one pair. The plan depends only on the set of pair ids
/// and the seed, not on the order the ids were supplied in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    /// Pair ids in shuffled order; pair `order[i]` is in fold `i % n_folds`.
    order: Vec<String>,
    assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn new<S: AsRef<str>>(pair_ids: &[S], n_folds: usize, seed: u64) -> Result<Self, ProbeError> {
        if n_folds < 2 {
            return Err(ProbeError::InvalidConfig(format!(
                "need at least 2 folds, got {n_folds}"
            )));
        }
        let unique: BTreeSet<&str> = pair_ids.iter().map(|s| s.as_ref()).collect();
        if unique.len() != pair_ids.len() {
            return Err(ProbeError::InvalidConfig("duplicate pair id in fold plan".into()));
        }
        if unique.len() < n_folds {
            return Err(ProbeError::TooFewPairs {
                pairs: unique.len(),
                folds: n_folds,
            });
        }
        let mut order: Vec<String> = unique.into_iter().map(str::to_string).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let assignment = order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i % n_folds))
            .collect();
        Ok(FoldPlan {
            n_folds,
            seed,
            order,
            assignment,
        })
    }

    pub fn fold_of(&self, pair_id: &str) -> Option<usize> {
        self.assignment.get(pair_id).copied()
    }

    pub fn n_pairs(&self) -> usize {
        self.order.len()
    }

    pub fn pairs(&self) -> &[String] {
        &self.order
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for f in self.assignment.values() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Position of every pair in the plan's canonical order.
    pub fn ranks(&self) -> BTreeMap<&str, usize> {
        self.order
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn sizes_balanced() {
        let plan = FoldPlan::new(&ids(23), 5, 9).unwrap();
        let sizes = plan.fold_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(
            FoldPlan::new(&ids(3), 5, 0),
            Err(ProbeError::TooFewPairs { pairs: 3, folds: 5 })
        ));
    }

    proptest! {
        #[test]
        fn order_of_input_does_not_matter(n in 5usize..60, seed in any::<u64>(), rot in 0usize..60) {
            let a = ids(n);
            let mut b = a.clone();
            b.rotate_left(rot % n);
            b.reverse();
            prop_assert_eq!(FoldPlan::new(&a, 5, seed).unwrap(), FoldPlan::new(&b, 5, seed).unwrap());
        }

        #[test]
        fn every_pair_assigned_once(n in 5usize..80, seed in any::<u64>()) {
            let plan = FoldPlan::new(&ids(n), 5, seed).unwrap();
            for id in ids(n) {
                prop_assert!(plan.fold_of(&id).unwrap() < 5);
            }
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
