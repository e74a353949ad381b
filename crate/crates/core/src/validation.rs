//! Fold plans (stratified K-fold, leave-one-group-out) and accuracy metrics.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    StratifiedKfold { k: usize, seed: u64 },
    Logo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub strategy: Strategy,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Observation count covered by the plan.
    pub fn num_observations(&self) -> usize {
        self.folds.iter().map(|f| f.test.len()).sum()
    }

    /// Fold index whose test set holds each observation.
    pub fn test_assignment(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.num_observations()];
        for (k, f) in self.folds.iter().enumerate() {
            for &i in &f.test {
                out[i] = k;
            }
        }
        out
    }

    /// Test sets partition `0..n`, train and test are complementary, and every
    /// train set holds at least two classes.
    pub fn check(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        let mut seen = vec![false; n];
        for (k, f) in self.folds.iter().enumerate() {
            for &i in &f.test {
                if i >= n || seen[i] {
                    return Err(Error::Validation(format!(
                        "fold {k}: observation {i} repeated or out of range"
                    )));
                }
                seen[i] = true;
            }
            if f.train.len() + f.test.len() != n {
                return Err(Error::Validation(format!("fold {k}: train/test do not cover all observations")));
            }
            let test: BTreeSet<usize> = f.test.iter().copied().collect();
            if f.train.iter().any(|i| test.contains(i)) {
                return Err(Error::Validation(format!("fold {k}: train and test overlap")));
            }
            let classes: BTreeSet<usize> = f.train.iter().map(|&i| labels[i]).collect();
            if classes.len() < 2 {
                return Err(Error::Validation(format!(
                    "fold {k}: training portion holds fewer than 2 classes"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Validation("test folds do not cover every observation".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in test {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Stratified K-fold: each class is shuffled on its own (seeded) and dealt
/// round-robin over the folds. The dealing position carries over between
/// classes so fold sizes stay balanced overall.
pub fn make_stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the {n} observations")));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            tests[cursor % k].push(i);
            cursor += 1;
        }
    }
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            Fold {
                train: complement(n, &test),
                test,
            }
        })
        .collect();
    let plan = FoldPlan {
        strategy: Strategy::StratifiedKfold { k, seed },
        folds,
    };
    plan.check(labels)?;
    Ok(plan)
}

/// One fold per distinct group id, in ascending id order.
pub fn make_logo(groups: &[usize]) -> Result<FoldPlan> {
    let n = groups.len();
    let distinct: BTreeSet<usize> = groups.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Validation(format!(
            "leave-one-group-out needs at least 2 groups, got {}",
            distinct.len()
        )));
    }
    let folds = distinct
        .into_iter()
        .map(|g| {
            let test: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
            Fold {
                train: complement(n, &test),
                test,
            }
        })
        .collect();
    Ok(FoldPlan {
        strategy: Strategy::Logo,
        folds,
    })
}

/// Number of distinct group ids, the default K for K-fold comparisons.
pub fn distinct_groups(groups: &[usize]) -> usize {
    groups.iter().collect::<BTreeSet<_>>().len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub err: f64,
    pub acc: f64,
    pub per_fold: Vec<f64>,
    pub fold_counts: Vec<usize>,
    pub n: usize,
}

/// Error rate is the mean 0-1 loss; accuracy is its complement.
/// `fold_assignment[i]` is the fold whose test set held observation `i`.
pub fn compute_metrics(y_true: &[usize], y_pred: &[usize], fold_assignment: &[usize]) -> Result<Metrics> {
    let n = y_true.len();
    if y_pred.len() != n {
        return Err(Error::dim(n, y_pred.len()));
    }
    if fold_assignment.len() != n {
        return Err(Error::dim(n, fold_assignment.len()));
    }
    if n == 0 {
        return Err(Error::Validation("no observations to score".into()));
    }
    let folds = fold_assignment.iter().max().map_or(0, |m| m + 1);
    let mut wrong_per_fold = vec![0usize; folds];
    let mut fold_counts = vec![0usize; folds];
    let mut wrong = 0usize;
    for i in 0..n {
        fold_counts[fold_assignment[i]] += 1;
        if y_true[i] != y_pred[i] {
            wrong += 1;
            wrong_per_fold[fold_assignment[i]] += 1;
        }
    }
    let err = wrong as f64 / n as f64;
    let per_fold = fold_counts
        .iter()
        .zip(&wrong_per_fold)
        .map(|(&c, &w)| if c == 0 { 0.0 } else { 1.0 - w as f64 / c as f64 })
        .collect();
    Ok(Metrics {
        err,
        acc: 1.0 - err,
        per_fold,
        fold_counts,
        n,
    })
}

/// Accuracy of one prediction vector.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let correct = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    correct as f64 / y_true.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Box-plot summary. Quantile `q` sits at position `q * (n - 1)` of the
/// sorted values, interpolating linearly between neighbours.
pub fn summarize_distribution(values: &[f64]) -> Result<FiveNumber> {
    if values.is_empty() {
        return Err(Error::Validation("cannot summarize an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Ok(FiveNumber {
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_counts(plan: &FoldPlan, labels: &[usize], class: usize) -> Vec<usize> {
        plan.folds
            .iter()
            .map(|f| f.test.iter().filter(|&&i| labels[i] == class).count())
            .collect()
    }

    #[test]
    fn exact_divisibility() {
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let plan = make_stratified_kfold(&labels, 3, 1).unwrap();
        for f in &plan.folds {
            assert_eq!(f.test.len(), 4);
        }
        assert_eq!(class_counts(&plan, &labels, 0), vec![2, 2, 2]);
        assert_eq!(class_counts(&plan, &labels, 1), vec![2, 2, 2]);
    }

    #[test]
    fn pigeonhole_spread() {
        let mut labels = vec![0usize; 7];
        labels.extend([1, 1, 1]);
        let plan = make_stratified_kfold(&labels, 3, 5).unwrap();
        let mut c = class_counts(&plan, &labels, 0);
        c.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(c, vec![3, 2, 2]);
    }

    #[test]
    fn kfold_determinism_and_errors() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        assert_eq!(make_stratified_kfold(&labels, 4, 9).unwrap(), make_stratified_kfold(&labels, 4, 9).unwrap());
        assert_ne!(make_stratified_kfold(&labels, 4, 9).unwrap(), make_stratified_kfold(&labels, 4, 10).unwrap());
        assert!(make_stratified_kfold(&labels, 31, 0).is_err());
        assert!(make_stratified_kfold(&labels, 1, 0).is_err());
    }

    #[test]
    fn logo_one_fold_per_group() {
        let groups = vec![2, 0, 1, 2, 0, 1, 1];
        let plan = make_logo(&groups).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan.folds[0].test, vec![1, 4]);
        assert_eq!(plan.folds[2].test, vec![0, 3]);
        let labels = vec![0, 1, 0, 1, 0, 1, 0];
        plan.check(&labels).unwrap();
        assert!(make_logo(&[4, 4, 4]).is_err());
    }

    #[test]
    fn metrics_arithmetic() {
        let m = compute_metrics(&[0, 1, 1, 0], &[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.acc, 0.5);
        assert_eq!(m.err, 0.5);
        assert_eq!(m.per_fold, vec![1.0, 0.0]);
        assert_eq!(m.fold_counts.iter().sum::<usize>(), 4);
        let all = compute_metrics(&[1, 2, 3], &[1, 2, 3], &[0, 0, 0]).unwrap();
        assert_eq!((all.acc, all.err), (1.0, 0.0));
        assert!(compute_metrics(&[1], &[1, 2], &[0]).is_err());
    }

    #[test]
    fn quartiles_linear_interpolation() {
        let s = summarize_distribution(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(summarize_distribution(&[0.1, 0.2, 0.3]).unwrap().median, 0.2);
        let one = summarize_distribution(&[0.7]).unwrap();
        assert_eq!((one.min, one.q1, one.median, one.q3, one.max), (0.7, 0.7, 0.7, 0.7, 0.7));
        assert!(summarize_distribution(&[]).is_err());
    }
}
