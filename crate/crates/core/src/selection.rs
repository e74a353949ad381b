//! Feature rankers. Each returns a permutation of feature indices, best
//! first, with scores non-increasing along the order. Ties always go to the
//! lower original index.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::svm::{train_svm, Kernel, SvmParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FsMethod {
    Pearson,
    #[serde(rename = "RELIEFF")]
    Relieff,
    #[serde(rename = "RFESVM")]
    RfeSvm,
    Spearman,
    #[serde(rename = "NoFS")]
    NoFs,
}

impl FsMethod {
    pub const ALL: [FsMethod; 5] = [
        FsMethod::Pearson,
        FsMethod::Relieff,
        FsMethod::RfeSvm,
        FsMethod::Spearman,
        FsMethod::NoFs,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FsMethod::Pearson => "Pearson",
            FsMethod::Relieff => "RELIEFF",
            FsMethod::RfeSvm => "RFESVM",
            FsMethod::Spearman => "Spearman",
            FsMethod::NoFs => "NoFS",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(id))
            .ok_or_else(|| Error::UnsupportedMethod(format!("unknown feature selection method '{id}'")))
    }
}

impl fmt::Display for FsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Feature indices, most relevant first.
    pub order: Vec<usize>,
    /// `scores[i]` belongs to `order[i]`.
    pub scores: Vec<f64>,
    pub method: FsMethod,
}

impl FeatureRanking {
    /// Orders features by descending score, ties to the lower index.
    pub fn from_scores(method: FsMethod, scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&f| scores[f]).collect();
        Self { order, scores: sorted, method }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The `k` best feature indices.
    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }

    /// Score of feature `f` (by original index).
    pub fn score_of(&self, f: usize) -> Option<f64> {
        self.order.iter().position(|&o| o == f).map(|i| self.scores[i])
    }

    /// Writes `rank,feature,score` rows; `rank` starts at 1.
    pub fn write_csv(&self, path: &Path, feature_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "feature", "score"])?;
        for (i, (&f, s)) in self.order.iter().zip(&self.scores).enumerate() {
            let name = feature_names.get(f).cloned().unwrap_or_else(|| format!("f{f}"));
            w.write_record([(i + 1).to_string(), name, s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dispatches to the ranker for `method` with its default parameters.
pub fn rank(method: FsMethod, x: &Matrix, y: &[usize], num_classes: usize) -> Result<FeatureRanking> {
    match method {
        FsMethod::Pearson => rank_pearson(x, y, num_classes),
        FsMethod::Spearman => rank_spearman(x, y, num_classes),
        FsMethod::Relieff => rank_relieff(x, y, num_classes, DEFAULT_RELIEFF_K),
        FsMethod::RfeSvm => rank_rfesvm(x, y, num_classes, None),
        FsMethod::NoFs => rank_none(x),
    }
}

fn check(x: &Matrix, y: &[usize], num_classes: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::dim(x.rows(), y.len()));
    }
    if x.cols() == 0 {
        return Err(Error::Validation("no features to rank".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Validation(format!("label {bad} >= class count {num_classes}")));
    }
    Ok(())
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let denom = (saa * sbb).sqrt();
    // rounding in the mean leaves constant columns with tiny nonzero spread
    let flat = |ss: f64, m: f64| ss == 0.0 || ss <= 1e-20 * n * m * m;
    if flat(saa, ma) || flat(sbb, mb) || denom == 0.0 {
        return 0.0;
    }
    (sab / denom).clamp(-1.0, 1.0)
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn indicators(y: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    let present: Vec<usize> = (0..num_classes).filter(|c| y.contains(c)).collect();
    // two classes give mirror-image indicators; one suffices
    let used = if present.len() == 2 { &present[..1] } else { &present[..] };
    used.iter()
        .map(|&c| y.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn max_abs_correlation(columns: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<f64> {
    columns
        .iter()
        .map(|col| targets.iter().map(|t| pearson(col, t).abs()).fold(0.0, f64::max))
        .collect()
}

fn columns(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.cols()).map(|j| x.column(j)).collect()
}

/// Max over one-vs-rest class indicators of `|r(feature, indicator)|`.
pub fn rank_pearson(x: &Matrix, y: &[usize], num_classes: usize) -> Result<FeatureRanking> {
    check(x, y, num_classes)?;
    let scores = max_abs_correlation(&columns(x), &indicators(y, num_classes));
    Ok(FeatureRanking::from_scores(FsMethod::Pearson, &scores))
}

/// As [`rank_pearson`] on average ranks of both the feature and the indicator.
pub fn rank_spearman(x: &Matrix, y: &[usize], num_classes: usize) -> Result<FeatureRanking> {
    check(x, y, num_classes)?;
    let cols: Vec<Vec<f64>> = columns(x).iter().map(|c| average_ranks(c)).collect();
    let targets: Vec<Vec<f64>> = indicators(y, num_classes).iter().map(|t| average_ranks(t)).collect();
    let scores = max_abs_correlation(&cols, &targets);
    Ok(FeatureRanking::from_scores(FsMethod::Spearman, &scores))
}

pub const DEFAULT_RELIEFF_K: usize = 10;

/// Multi-class ReliefF over all instances. Features are rescaled to `[0, 1]`
/// (constant features contribute no difference) and neighbours are found
/// under the Manhattan distance, ties to the lower index.
pub fn rank_relieff(x: &Matrix, y: &[usize], num_classes: usize, k_neighbors: usize) -> Result<FeatureRanking> {
    check(x, y, num_classes)?;
    let (n, p) = (x.rows(), x.cols());
    let mut counts = vec![0usize; num_classes];
    for &l in y {
        counts[l] += 1;
    }
    let smallest = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    if smallest < 2 {
        return Err(Error::Validation("RELIEFF needs at least 2 members in every class".into()));
    }
    let k = if k_neighbors > smallest - 1 {
        log::warn!("RELIEFF: clamping k from {k_neighbors} to {}", smallest - 1);
        smallest - 1
    } else {
        k_neighbors.max(1)
    };

    let mut scaled = x.clone();
    for j in 0..p {
        let col = x.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for i in 0..n {
            let v = if span > 0.0 { (x.get(i, j) - lo) / span } else { 0.0 };
            scaled.set(i, j, v);
        }
    }
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut weights = vec![0.0; p];
    let scale = 1.0 / (n as f64 * k as f64);

    for r in 0..n {
        let xr = scaled.row(r);
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&i| i != r)
            .map(|i| (xr.iter().zip(scaled.row(i)).map(|(a, b)| (a - b).abs()).sum(), i))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let own = y[r];
        let mut taken = vec![0usize; num_classes];
        for &(_, i) in &by_dist {
            let c = y[i];
            if taken[c] >= k {
                continue;
            }
            taken[c] += 1;
            let w = if c == own { -1.0 } else { priors[c] / (1.0 - priors[own]) };
            for (wf, (a, b)) in weights.iter_mut().zip(xr.iter().zip(scaled.row(i))) {
                *wf += w * scale * (a - b).abs();
            }
        }
    }
    Ok(FeatureRanking::from_scores(FsMethod::Relieff, &weights))
}

/// Elimination step used when none is given: 1 up to 256 features, `p / 20` above.
pub fn default_rfe_step(p: usize) -> usize {
    if p <= 256 {
        1
    } else {
        (p / 20).max(1)
    }
}

/// Recursive feature elimination with a linear one-vs-one SVM (`C = 1`).
/// Features are scored by the summed squared weights over all binary
/// machines and the weakest `step` are removed each round. The returned
/// score of the feature at position `i` is `p - i`.
pub fn rank_rfesvm(x: &Matrix, y: &[usize], num_classes: usize, step: Option<usize>) -> Result<FeatureRanking> {
    check(x, y, num_classes)?;
    let p = x.cols();
    let step = step.unwrap_or_else(|| default_rfe_step(p)).max(1);
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut eliminated: Vec<usize> = Vec::with_capacity(p);
    let params = SvmParams::default();

    while remaining.len() > 1 {
        let sub = x.select_cols(&remaining);
        let model = train_svm(&sub, y, num_classes, Kernel::Linear, &params)?;
        if !model.converged() {
            log::warn!(
                "RFE-SVM: inner SVM did not converge with {} features left; keeping their current order",
                remaining.len()
            );
            break;
        }
        let mut w2 = vec![0.0; remaining.len()];
        for m in &model.machines {
            for (acc, w) in w2.iter_mut().zip(m.linear_weights()) {
                *acc += w * w;
            }
        }
        // weakest first; among equals the higher original index goes first
        let mut pos: Vec<usize> = (0..remaining.len()).collect();
        pos.sort_by(|&a, &b| w2[a].total_cmp(&w2[b]).then(remaining[b].cmp(&remaining[a])));
        let drop = step.min(remaining.len() - 1);
        let mut dropped: Vec<usize> = pos[..drop].to_vec();
        eliminated.extend(dropped.iter().map(|&i| remaining[i]));
        dropped.sort_unstable();
        for &i in dropped.iter().rev() {
            remaining.remove(i);
        }
    }
    let mut order = remaining;
    order.extend(eliminated.into_iter().rev());
    let scores = (0..p).map(|i| (p - i) as f64).collect();
    Ok(FeatureRanking { order, scores, method: FsMethod::RfeSvm })
}

/// Identity order with equal scores.
pub fn rank_none(x: &Matrix) -> Result<FeatureRanking> {
    if x.cols() == 0 {
        return Err(Error::Validation("no features to rank".into()));
    }
    Ok(FeatureRanking {
        order: (0..x.cols()).collect(),
        scores: vec![1.0; x.cols()],
        method: FsMethod::NoFs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn indicator_feature_ranks_first() {
        let y = vec![0, 0, 1, 1, 0, 1];
        let rows: Vec<Vec<f64>> = y.iter().map(|&l| vec![0.3 * l as f64 + 0.1, 5.0, (l as f64).exp()]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let r = rank_pearson(&x, &y, 2).unwrap();
        assert_eq!(r.order[..2], [0, 2]);
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.score_of(1), Some(0.0));
        let s = rank_spearman(&x, &y, 2).unwrap();
        assert!((s.score_of(2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relieff_four_point_trace() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let r = rank_relieff(&x, &[0, 0, 1, 1], 2, 1).unwrap();
        assert_eq!(r.order, vec![0, 1]);
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        assert!((r.scores[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn relieff_duplicate_columns_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| {
                let s = l as f64 + 0.1 * rng.random::<f64>();
                vec![s, rng.random(), s, 7.0]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let r = rank_relieff(&x, &y, 3, 10).unwrap();
        assert_eq!(r.score_of(0), r.score_of(2));
        assert_eq!(r.order[..2], [0, 2]);
        assert!(r.score_of(3).unwrap() <= r.score_of(0).unwrap());
        assert_eq!(r.score_of(3), Some(0.0));
    }

    #[test]
    fn rfe_keeps_decisive_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| {
                let mut r: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
                r[0] = if l == 1 { 2.0 } else { -2.0 } + 0.2 * r[0];
                r
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let r = rank_rfesvm(&x, &y, 2, None).unwrap();
        assert_eq!(r.order[0], 0);
        let single = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(rank_rfesvm(&single, &[0, 0, 1, 1], 2, None).unwrap().order, vec![0]);
    }

    #[test]
    fn none_is_identity() {
        let x = Matrix::zeros(3, 5);
        let r = rank_none(&x).unwrap();
        assert_eq!(r.order, vec![0, 1, 2, 3, 4]);
        assert_eq!(r, rank_none(&x).unwrap());
    }

    #[test]
    fn rfe_step_rule() {
        assert_eq!(default_rfe_step(256), 1);
        assert_eq!(default_rfe_step(512), 25);
    }
}
