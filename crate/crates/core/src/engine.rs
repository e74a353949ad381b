//! Exhaustive pipeline search.
//!
//! A pipeline is signal normalization, feature extraction, per-feature
//! standardization, ranking, and a classifier on the `k` best-ranked
//! features. Extraction, standardization and ranking are fitted on the
//! training portion; `k` is picked from [`k_grid`] by an inner stratified
//! cross-validation on the same portion (ties to the smaller `k`) and the
//! classifier is then refitted on the whole portion.
//!
//! [`exhaustive_search`] shares the extractor and ranking of each outer fold
//! across the pipelines that use them, so the catalog is evaluated in three
//! stages; results do not depend on the worker count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, TrainedClassifier};
use crate::dataset::{LabeledSignalSet, NormDim, Normalization, Normalizer};
use crate::error::{Error, Result};
use crate::features::{fit_on_signals, ExtractorSpec, FeMethod, FittedExtractor};
use crate::matrix::Matrix;
use crate::selection::{rank, FeatureRanking, FsMethod};
use crate::validation::{make_stratified_kfold, Fold, FoldPlan};

pub const INNER_FOLDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub extractor: ExtractorSpec,
    pub selector: FsMethod,
    pub classifier: ClassifierKind,
}

impl PipelineSpec {
    pub fn new(fe: impl Into<ExtractorSpec>, fs: FsMethod, clf: ClassifierKind) -> Self {
        Self { extractor: fe.into(), selector: fs, classifier: clf }
    }

    /// `FE+FS+CLF`, e.g. `NoFE+NoFS+SVM`.
    pub fn id(&self) -> String {
        format!("{}+{}+{}", self.extractor.method, self.selector, self.classifier)
    }

    /// Inverse of [`PipelineSpec::id`] with default extractor parameters.
    pub fn from_id(id: &str) -> Result<Self> {
        let parts: Vec<&str> = id.split('+').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("pipeline id '{id}' is not FE+FS+CLF")));
        }
        let fe = FeMethod::from_id(parts[0])
            .ok_or_else(|| Error::UnsupportedMethod(format!("unknown feature extractor '{}'", parts[0])))?;
        Ok(Self::new(fe, FsMethod::from_id(parts[1])?, ClassifierKind::from_id(parts[2])?))
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Every FE x FS x classifier combination, FE-major, then FS, then classifier.
pub fn enumerate_catalog() -> Vec<PipelineSpec> {
    let mut out = Vec::with_capacity(FeMethod::ALL.len() * FsMethod::ALL.len() * ClassifierKind::ALL.len());
    for fe in FeMethod::ALL {
        for fs in FsMethod::ALL {
            for clf in ClassifierKind::ALL {
                out.push(PipelineSpec::new(fe, fs, clf));
            }
        }
    }
    out
}

/// Candidate feature counts: `1..=min(p, 30)`, then steps of x1.5 (rounded)
/// up to `p`, always ending at `p`.
pub fn k_grid(p: usize) -> Vec<usize> {
    let dense = p.min(30);
    let mut grid: Vec<usize> = (1..=dense).collect();
    let mut k = dense;
    while k < p {
        k = ((k as f64 * 1.5).round() as usize).clamp(k + 1, p);
        grid.push(k);
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Applied to raw signals before extraction.
    pub normalization: Normalization,
    /// Seed of every inner fold plan.
    pub seed: u64,
    pub inner_folds: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { normalization: Normalization::None, seed: 0, inner_folds: INNER_FOLDS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub fold: Option<usize>,
    pub seed: u64,
    pub num_train: usize,
    pub started_unix_s: u64,
    pub seconds: f64,
}

/// A fitted pipeline; prediction uses exactly the `k` best-ranked features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub spec: PipelineSpec,
    pub normalizer: Normalizer,
    pub extractor: FittedExtractor,
    pub feature_scaler: Normalizer,
    pub ranking: FeatureRanking,
    pub k: usize,
    /// Inner cross-validated accuracy of every candidate `k`.
    pub k_curve: Vec<(usize, f64)>,
    pub classifier: TrainedClassifier,
    pub metadata: TrainingMetadata,
}

impl TrainedPipeline {
    pub fn selected_features(&self) -> &[usize] {
        self.ranking.top(self.k)
    }

    pub fn signal_len(&self) -> usize {
        self.extractor.signal_len()
    }

    pub fn features(&self, signals: &Matrix) -> Result<Matrix> {
        let normalized = self.normalizer.apply(signals)?;
        let fm = self.extractor.apply(&normalized)?;
        let scaled = self.feature_scaler.apply(&fm.values)?;
        Ok(scaled.select_cols(self.selected_features()))
    }

    pub fn predict(&self, signals: &Matrix) -> Result<Vec<usize>> {
        self.classifier.predict(&self.features(signals)?)
    }

    /// Per-class scores (see [`TrainedClassifier::scores_row`]).
    pub fn scores(&self, signals: &Matrix) -> Result<Vec<Vec<f64>>> {
        self.classifier.scores(&self.features(signals)?)
    }

    pub fn scores_row(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, signal.len(), signal.to_vec())?;
        Ok(self.scores(&m)?.remove(0))
    }
}

/// Extraction stage of a pipeline, shared by every FS and classifier choice.
#[derive(Debug, Clone)]
pub struct PreparedFeatures {
    pub normalizer: Normalizer,
    pub extractor: FittedExtractor,
    pub feature_scaler: Normalizer,
    /// Standardized training features.
    pub features: Matrix,
}

pub fn prepare_features(spec: &ExtractorSpec, train: &LabeledSignalSet, options: &EngineOptions) -> Result<PreparedFeatures> {
    let normalizer = Normalizer::fit(options.normalization, train.signals());
    let signals = normalizer.apply(train.signals())?;
    let extractor = fit_on_signals(spec, &signals)?;
    let raw = extractor.apply(&signals)?.values;
    let feature_scaler = Normalizer::fit(Normalization::Zscore(NormDim::Element), &raw);
    let features = feature_scaler.apply(&raw)?;
    Ok(PreparedFeatures { normalizer, extractor, feature_scaler, features })
}

/// Chosen `k`, its accuracy curve, and the refitted classifier.
struct KChoice {
    k: usize,
    curve: Vec<(usize, f64)>,
    classifier: TrainedClassifier,
}

fn choose_k(
    kind: ClassifierKind,
    x: &Matrix,
    y: &[usize],
    num_classes: usize,
    ranking: &FeatureRanking,
    inner: &FoldPlan,
) -> Result<KChoice> {
    let grid = k_grid(x.cols());
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut errors = Vec::new();
    if grid.len() > 1 {
        for &k in &grid {
            let sub = x.select_cols(ranking.top(k));
            let mut correct = 0usize;
            let mut total = 0usize;
            let mut ok = true;
            for fold in &inner.folds {
                total += fold.test.len();
                let ytr: Vec<usize> = fold.train.iter().map(|&i| y[i]).collect();
                match TrainedClassifier::fit(kind, &sub.select_rows(&fold.train), &ytr, num_classes) {
                    Ok(model) => {
                        for &i in &fold.test {
                            if model.predict_row(sub.row(i)) == y[i] {
                                correct += 1;
                            }
                        }
                    }
                    Err(e) => {
                        ok = false;
                        errors.push(format!("k={k}: {e}"));
                    }
                }
            }
            let acc = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
            curve.push((k, acc));
            if ok && best.is_none_or(|(_, b)| acc > b) {
                best = Some((k, acc));
            }
        }
    }
    let k = match (grid.len(), best) {
        (1, _) => 1,
        (_, Some((k, _))) => k,
        (_, None) => {
            return Err(Error::Training(format!(
                "no feature count could be evaluated: {}",
                errors.first().map(String::as_str).unwrap_or("empty grid")
            )))
        }
    };
    let classifier = TrainedClassifier::fit(kind, &x.select_cols(ranking.top(k)), y, num_classes)?;
    Ok(KChoice { k, curve, classifier })
}

pub fn inner_plan(train: &LabeledSignalSet, options: &EngineOptions) -> Result<FoldPlan> {
    make_stratified_kfold(train.labels(), options.inner_folds.min(train.len()), options.seed)
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn assemble(
    spec: PipelineSpec,
    prepared: &PreparedFeatures,
    ranking: &FeatureRanking,
    train: &LabeledSignalSet,
    inner: &FoldPlan,
) -> Result<TrainedPipeline> {
    let started = Instant::now();
    let choice = choose_k(spec.classifier, &prepared.features, train.labels(), train.num_classes(), ranking, inner)?;
    Ok(TrainedPipeline {
        spec,
        normalizer: prepared.normalizer.clone(),
        extractor: prepared.extractor.clone(),
        feature_scaler: prepared.feature_scaler.clone(),
        ranking: ranking.clone(),
        k: choice.k,
        k_curve: choice.curve,
        classifier: choice.classifier,
        metadata: TrainingMetadata {
            fold: None,
            seed: 0,
            num_train: train.len(),
            started_unix_s: now_unix(),
            seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Fits one pipeline on `train`; `inner` must index into `train`.
pub fn fit_pipeline(
    spec: &PipelineSpec,
    train: &LabeledSignalSet,
    inner: &FoldPlan,
    options: &EngineOptions,
) -> Result<TrainedPipeline> {
    if inner.num_observations() != train.len() {
        return Err(Error::Validation("inner plan does not cover the training set".into()));
    }
    let started = Instant::now();
    let prepared = prepare_features(&spec.extractor, train, options)?;
    let ranking = rank(spec.selector, &prepared.features, train.labels(), train.num_classes())?;
    let mut tp = assemble(*spec, &prepared, &ranking, train, inner)?;
    tp.metadata.seed = options.seed;
    tp.metadata.seconds = started.elapsed().as_secs_f64();
    Ok(tp)
}

/// Fits the pipeline of one outer fold from its training portion alone.
pub fn fit_fold(spec: &PipelineSpec, set: &LabeledSignalSet, fold: &Fold, options: &EngineOptions) -> Result<TrainedPipeline> {
    let train = set.subset(&fold.train);
    let inner = inner_plan(&train, options)?;
    fit_pipeline(spec, &train, &inner, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub accuracy: f64,
    /// Chosen feature count; 0 when the fold failed.
    pub k: usize,
    pub seconds: f64,
    pub error: Option<String>,
    /// Predicted class of each test observation, in fold order.
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub spec: PipelineSpec,
    pub pipeline: String,
    pub per_fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub chosen_k: Vec<usize>,
    pub fold_seconds: Vec<f64>,
    pub failed: bool,
    pub failures: Vec<String>,
}

impl CVResult {
    fn from_outcomes(spec: PipelineSpec, outcomes: Vec<FoldOutcome>) -> Self {
        let per_fold_accuracy: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
        let mean_accuracy = per_fold_accuracy.iter().sum::<f64>() / per_fold_accuracy.len().max(1) as f64;
        let failures: Vec<String> = outcomes
            .iter()
            .enumerate()
            .filter_map(|(f, o)| o.error.as_ref().map(|e| format!("fold {f}: {e}")))
            .collect();
        Self {
            spec,
            pipeline: spec.id(),
            mean_accuracy,
            chosen_k: outcomes.iter().map(|o| o.k).collect(),
            fold_seconds: outcomes.iter().map(|o| o.seconds).collect(),
            failed: !failures.is_empty(),
            failures,
            per_fold_accuracy,
        }
    }

    pub fn mean_k(&self) -> f64 {
        self.chosen_k.iter().sum::<usize>() as f64 / self.chosen_k.len().max(1) as f64
    }

    pub fn num_folds(&self) -> usize {
        self.per_fold_accuracy.len()
    }
}

fn score_fold(result: Result<TrainedPipeline>, set: &LabeledSignalSet, fold: &Fold, started: Instant) -> FoldOutcome {
    let outcome = result.and_then(|tp| {
        let preds = tp.predict(&set.signals().select_rows(&fold.test))?;
        Ok((tp.k, preds))
    });
    let seconds = started.elapsed().as_secs_f64();
    match outcome {
        Ok((k, predictions)) => {
            let correct = fold.test.iter().zip(&predictions).filter(|(&i, &p)| set.labels()[i] == p).count();
            FoldOutcome {
                accuracy: correct as f64 / fold.test.len().max(1) as f64,
                k,
                seconds,
                error: None,
                predictions,
            }
        }
        Err(e) => FoldOutcome { accuracy: 0.0, k: 0, seconds, error: Some(e.to_string()), predictions: vec![] },
    }
}

/// Outer cross-validation of a single pipeline.
pub fn evaluate_pipeline(spec: &PipelineSpec, set: &LabeledSignalSet, outer: &FoldPlan, options: &EngineOptions) -> CVResult {
    let outcomes = outer
        .folds
        .iter()
        .map(|fold| {
            let started = Instant::now();
            score_fold(fit_fold(spec, set, fold, options), set, fold, started)
        })
        .collect();
    CVResult::from_outcomes(*spec, outcomes)
}

/// Mean accuracy descending, then smaller mean `k`, then catalog order;
/// failed pipelines last.
pub fn rank_results(results: &mut [CVResult]) {
    let catalog: HashMap<PipelineSpec, usize> = enumerate_catalog().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    let pos = |s: &PipelineSpec| catalog.get(s).copied().unwrap_or(usize::MAX);
    results.sort_by(|a, b| {
        a.failed
            .cmp(&b.failed)
            .then(b.mean_accuracy.total_cmp(&a.mean_accuracy))
            .then(a.mean_k().total_cmp(&b.mean_k()))
            .then(pos(&a.spec).cmp(&pos(&b.spec)))
            .then(a.spec.cmp(&b.spec))
    });
}

/// Evaluates every spec on every outer fold with `parallelism` workers
/// (0 = all cores) and returns the ranked results.
pub fn exhaustive_search(
    set: &LabeledSignalSet,
    outer: &FoldPlan,
    parallelism: usize,
    options: &EngineOptions,
) -> Result<Vec<CVResult>> {
    search_specs(&enumerate_catalog(), set, outer, parallelism, options)
}

pub fn search_specs(
    specs: &[PipelineSpec],
    set: &LabeledSignalSet,
    outer: &FoldPlan,
    parallelism: usize,
    options: &EngineOptions,
) -> Result<Vec<CVResult>> {
    if outer.num_observations() != set.len() {
        return Err(Error::Validation("outer plan does not cover the data set".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| run_stages(specs, set, outer, options)))
}

type Shared<T> = std::result::Result<T, String>;

fn run_stages(specs: &[PipelineSpec], set: &LabeledSignalSet, outer: &FoldPlan, options: &EngineOptions) -> Vec<CVResult> {
    let nf = outer.len();
    let trains: Vec<(LabeledSignalSet, Shared<FoldPlan>)> = outer
        .folds
        .par_iter()
        .map(|f| {
            let train = set.subset(&f.train);
            let inner = inner_plan(&train, options).map_err(|e| e.to_string());
            (train, inner)
        })
        .collect();

    let mut extractors: Vec<ExtractorSpec> = specs.iter().map(|s| s.extractor).collect();
    extractors.sort();
    extractors.dedup();
    let stage1: BTreeMap<(ExtractorSpec, usize), (Shared<PreparedFeatures>, f64)> = extractors
        .iter()
        .flat_map(|e| (0..nf).map(move |f| (*e, f)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(e, f)| {
            let t = Instant::now();
            let r = prepare_features(&e, &trains[f].0, options).map_err(|x| x.to_string());
            ((e, f), (r, t.elapsed().as_secs_f64()))
        })
        .collect();

    let mut rankers: Vec<(ExtractorSpec, FsMethod)> = specs.iter().map(|s| (s.extractor, s.selector)).collect();
    rankers.sort();
    rankers.dedup();
    let stage2: BTreeMap<(ExtractorSpec, FsMethod, usize), (Shared<FeatureRanking>, f64)> = rankers
        .iter()
        .flat_map(|&(e, s)| (0..nf).map(move |f| (e, s, f)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(e, s, f)| {
            let t = Instant::now();
            let r = match &stage1[&(e, f)].0 {
                Ok(p) => rank(s, &p.features, trains[f].0.labels(), set.num_classes()).map_err(|x| x.to_string()),
                Err(x) => Err(x.clone()),
            };
            ((e, s, f), (r, t.elapsed().as_secs_f64()))
        })
        .collect();

    let tasks: Vec<(usize, usize)> = (0..specs.len()).flat_map(|i| (0..nf).map(move |f| (i, f))).collect();
    let outcomes: Vec<FoldOutcome> = tasks
        .par_iter()
        .map(|&(i, f)| {
            let spec = specs[i];
            let started = Instant::now();
            let (prep, t1) = &stage1[&(spec.extractor, f)];
            let (ranking, t2) = &stage2[&(spec.extractor, spec.selector, f)];
            let (train, inner) = &trains[f];
            let fitted = match (prep, ranking, inner) {
                (Ok(p), Ok(r), Ok(inner)) => assemble(spec, p, r, train, inner),
                (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => Err(Error::Training(e.clone())),
            };
            let mut o = score_fold(fitted, set, &outer.folds[f], started);
            o.seconds += t1 + t2;
            o
        })
        .collect();

    let mut it = outcomes.into_iter();
    let mut results: Vec<CVResult> = specs
        .iter()
        .map(|s| CVResult::from_outcomes(*s, it.by_ref().take(nf).collect()))
        .collect();
    rank_results(&mut results);
    results
}

/// Pooled histogram of chosen `k` over all successful folds of the first `m`
/// (ranked) results.
pub fn feature_count_histogram(results: &[CVResult], m: usize) -> Result<BTreeMap<usize, usize>> {
    if results.is_empty() || m == 0 {
        return Err(Error::Validation("feature-count histogram needs at least one result".into()));
    }
    let mut hist = BTreeMap::new();
    for r in results.iter().take(m) {
        for &k in r.chosen_k.iter().filter(|&&k| k > 0) {
            *hist.entry(k).or_insert(0) += 1;
        }
    }
    Ok(hist)
}

/// Ranked results as JSON; timings are zeroed unless `with_timings`.
pub fn results_to_json(results: &[CVResult], with_timings: bool) -> Result<String> {
    if with_timings {
        return Ok(serde_json::to_string_pretty(results)?);
    }
    let stripped: Vec<CVResult> = results
        .iter()
        .cloned()
        .map(|mut r| {
            r.fold_seconds.iter_mut().for_each(|s| *s = 0.0);
            r
        })
        .collect();
    Ok(serde_json::to_string_pretty(&stripped)?)
}

/// One row per result: rank, ids, mean accuracy, mean k, per-fold accuracies.
pub fn write_results_csv<W: std::io::Write>(results: &[CVResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "pipeline", "fe", "fs", "classifier", "mean_accuracy", "mean_k", "fold_accuracies", "failed"])?;
    for (i, r) in results.iter().enumerate() {
        let folds: Vec<String> = r.per_fold_accuracy.iter().map(|a| format!("{a:.6}")).collect();
        w.write_record([
            (i + 1).to_string(),
            r.pipeline.clone(),
            r.spec.extractor.method.id().to_string(),
            r.spec.selector.id().to_string(),
            r.spec.classifier.id().to_string(),
            format!("{:.6}", r.mean_accuracy),
            format!("{:.3}", r.mean_k()),
            folds.join(";"),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_shape() {
        let c = enumerate_catalog();
        assert_eq!(c.len(), 70);
        assert_eq!(c[0].id(), "ALA+Pearson+LDAMahal");
        let distinct: std::collections::BTreeSet<_> = c.iter().collect();
        assert_eq!(distinct.len(), 70);
        assert_eq!(PipelineSpec::from_id("NoFE+NoFS+SVM").unwrap(), PipelineSpec::new(FeMethod::NoFe, FsMethod::NoFs, ClassifierKind::Svm));
    }

    #[test]
    fn grid_values() {
        assert_eq!(k_grid(1), vec![1]);
        assert_eq!(k_grid(8), (1..=8).collect::<Vec<_>>());
        let g = k_grid(512);
        assert_eq!(&g[28..], &[29, 30, 45, 68, 102, 153, 230, 345, 512]);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ranking_order() {
        let mk = |i: usize, acc: f64, k: usize, failed: bool| CVResult {
            spec: enumerate_catalog()[i],
            pipeline: String::new(),
            per_fold_accuracy: vec![acc],
            mean_accuracy: acc,
            chosen_k: vec![k],
            fold_seconds: vec![0.0],
            failed,
            failures: vec![],
        };
        let mut r = vec![mk(0, 0.9, 5, false), mk(1, 0.9, 3, false), mk(2, 0.99, 9, true), mk(3, 0.95, 9, false), mk(4, 0.9, 3, false)];
        rank_results(&mut r);
        let order: Vec<usize> = r.iter().map(|x| enumerate_catalog().iter().position(|s| *s == x.spec).unwrap()).collect();
        assert_eq!(order, vec![3, 1, 4, 0, 2]);
    }

    #[test]
    fn histogram_counts_folds() {
        let r = CVResult {
            spec: enumerate_catalog()[0],
            pipeline: String::new(),
            per_fold_accuracy: vec![1.0; 4],
            mean_accuracy: 1.0,
            chosen_k: vec![2, 2, 3, 7],
            fold_seconds: vec![0.0; 4],
            failed: false,
            failures: vec![],
        };
        let h = feature_count_histogram(&[r], 1).unwrap();
        assert_eq!(h.values().sum::<usize>(), 4);
        assert_eq!(h[&2], 2);
        assert!(feature_count_histogram(&[], 3).is_err());
    }
}
