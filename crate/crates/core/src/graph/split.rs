use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label};
use crate::error::{Error, Result};

/// Stratified k-fold assignment of graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl SplitPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] == fold)
            .collect()
    }

    /// `(train, val, test)` for one round: `fold` is the test fold and the
    /// next fold (cyclically) is held out for validation.
    pub fn train_val_test(&self, fold: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let val_fold = (fold + 1) % self.k;
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.folds.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else if f == val_fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val, test)
    }
}

/// Stratified-by-label fold assignment, deterministic in `seed`.
///
/// Graphs of each class are shuffled and dealt round-robin; the dealing
/// position carries over between classes so fold sizes differ by at most one.
pub fn make_splits(dataset: &Dataset, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 2")));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if k > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of graphs ({})",
            dataset.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in dataset.graphs().iter().enumerate() {
        let key = match g.label() {
            Label::Class(c) => *c,
            Label::Tasks(_) => 0,
        };
        by_class.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; dataset.len()];
    let mut pos = 0usize;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = pos % k;
            pos += 1;
        }
    }
    Ok(SplitPlan { folds, k, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn balanced(n_per_class: usize) -> Dataset {
        let graphs = (0..2 * n_per_class)
            .map(|i| {
                Graph::unlabeled(1, &[])
                    .unwrap()
                    .with_label(Label::Class(i % 2))
            })
            .collect();
        Dataset::new("b", 2, graphs).unwrap()
    }

    #[test]
    fn one_graph_per_class_per_fold() {
        let ds = balanced(5);
        for seed in 0..5 {
            let plan = make_splits(&ds, 5, seed).unwrap();
            for f in 0..5 {
                let idx = plan.fold_indices(f);
                assert_eq!(idx.len(), 2);
                let ones = idx.iter().filter(|&&i| i % 2 == 1).count();
                assert_eq!(ones, 1);
            }
        }
    }

    #[test]
    fn deterministic() {
        let ds = balanced(20);
        assert_eq!(make_splits(&ds, 10, 7).unwrap(), make_splits(&ds, 10, 7).unwrap());
    }

    #[test]
    fn too_many_folds() {
        assert!(make_splits(&balanced(5), 20, 0).is_err());
        assert!(make_splits(&balanced(5), 1, 0).is_err());
    }

    #[test]
    fn train_val_test_partition() {
        let plan = make_splits(&balanced(10), 10, 3).unwrap();
        let (tr, va, te) = plan.train_val_test(9);
        assert_eq!(tr.len() + va.len() + te.len(), 20);
        assert!(va.iter().all(|&i| plan.folds[i] == 0));
    }
}
