//! JSON-configured experiments and their reports.
//!
//! A config names a dataset (CSV file or synthetic spec), a validation mode
//! (`kfold`, `logo`, or `compare` for both), a signal normalization, one
//! scope and an output directory. [`run_experiment`] writes `report.json`
//! (schema `report_v1`), `summary.csv` and SVG plots there.
//!
//! ```json
//! {
//!   "dataset": { "source": "synthetic", "spec": { "num_classes": 3, "num_groups": 4,
//!                "n_per_cell": 40, "signal_len": 512, "class_effect": 1.0,
//!                "group_effect": 3.0, "noise_std": 1.0, "seed": 7 } },
//!   "validation": { "kind": "compare", "seed": 1 },
//!   "normalization": { "kind": "none" },
//!   "scope": { "kind": "search70" },
//!   "output_dir": "out/shift",
//!   "parallelism": 0,
//!   "seed": 0
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::container::{self, StoredModel};
use crate::dataset::{generate_synthetic_shift, load_signal_set, LabeledSignalSet, Normalization, SignalFormat, SyntheticShiftSpec};
use crate::engine::{self, enumerate_catalog, CVResult, EngineOptions, PipelineSpec};
use crate::error::{Error, Result};
use crate::interpret::{attribution_peak_region, occlusion_grid_search_with, AttributionMap};
use crate::mlp::{self, MlpConfig, MlpCvResult, TrialResult};
use crate::plots;
use crate::validation::{distinct_groups, make_logo, make_stratified_kfold, summarize_distribution, FiveNumber, Fold, FoldPlan};

pub const REPORT_SCHEMA: &str = "report_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv { path: PathBuf },
    Synthetic { spec: SyntheticShiftSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationConfig {
    /// `k` defaults to the number of distinct groups.
    Kfold {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
    Logo,
    /// K-fold and LOGO with identical seeds.
    Compare {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

fn default_masks() -> Vec<usize> {
    vec![5, 10, 20, 50, 100, 200, 500, 1000]
}

fn default_strides() -> Vec<usize> {
    vec![5, 10, 20, 50, 100, 200, 500, 1000]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    /// All 70 pipelines.
    Search70,
    /// One pipeline by id, e.g. `"NoFE+NoFS+SVM"`.
    Pipeline { pipeline: String },
    /// The MLP baseline, optionally preceded by a random search.
    Mlp {
        #[serde(default)]
        config: MlpConfig,
        #[serde(default)]
        search_trials: Option<usize>,
    },
    /// Occlusion maps of one observation. The model is loaded from
    /// `model_path` or, failing that, `pipeline` is trained on the dataset.
    Occlusion {
        #[serde(default)]
        model_path: Option<PathBuf>,
        #[serde(default)]
        pipeline: Option<String>,
        #[serde(default)]
        signal_index: usize,
        #[serde(default = "default_masks")]
        mask_sizes: Vec<usize>,
        #[serde(default = "default_strides")]
        strides: Vec<usize>,
        #[serde(default)]
        mask_value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub validation: ValidationConfig,
    #[serde(default)]
    pub normalization: Normalization,
    pub scope: Scope,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    /// Seeds the inner fold plans and the MLP.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: OutputFormat,
    /// Write the model refitted on the full dataset to `model.cmb`.
    #[serde(default)]
    pub save_model: bool,
    #[serde(default = "default_plots")]
    pub plots: bool,
}

fn default_plots() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation {
            ValidationConfig::Kfold { k: Some(k), .. } | ValidationConfig::Compare { k: Some(k), .. } if k < 2 => {
                return Err(Error::Config(format!("kfold requires k >= 2, got {k}")));
            }
            _ => {}
        }
        if let DatasetSource::Synthetic { spec } = &self.dataset {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        match &self.scope {
            Scope::Pipeline { pipeline } => {
                PipelineSpec::from_id(pipeline)?;
            }
            Scope::Mlp { config, search_trials } => {
                config.validate()?;
                if let Some(t) = search_trials {
                    if *t == 0 || *t > mlp::MAX_SEARCH_TRIALS {
                        return Err(Error::Config(format!("search_trials must be in 1..={}", mlp::MAX_SEARCH_TRIALS)));
                    }
                }
            }
            Scope::Occlusion { model_path, pipeline, .. } => {
                if model_path.is_none() && pipeline.is_none() {
                    return Err(Error::Config("occlusion scope needs model_path or pipeline".into()));
                }
                if let Some(p) = pipeline {
                    PipelineSpec::from_id(p)?;
                }
            }
            Scope::Search70 => {}
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<LabeledSignalSet> {
        match &self.dataset {
            DatasetSource::Csv { path } => load_signal_set(path, SignalFormat::Csv),
            DatasetSource::Synthetic { spec } => generate_synthetic_shift(spec),
        }
    }

    fn engine_options(&self) -> EngineOptions {
        EngineOptions { normalization: self.normalization, seed: self.seed, ..EngineOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub observations: usize,
    pub signal_len: usize,
    pub classes: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub version: String,
    pub created_unix_s: u64,
    pub seed: u64,
    pub kfold_seed: Option<u64>,
}

/// Results under one validation strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRun {
    /// `kfold` or `logo`.
    pub strategy: String,
    pub folds: usize,
    /// Ranked pipeline results (search and pipeline scopes).
    pub results: Vec<CVResult>,
    pub mlp: Option<MlpCvResult>,
    /// Distribution of per-pipeline error rates.
    pub error_summary: Option<FiveNumber>,
    /// Chosen feature counts of the top three pipelines, pooled over folds.
    pub feature_count_histogram: BTreeMap<usize, usize>,
}

impl ValidationRun {
    pub fn mean_accuracy(&self) -> f64 {
        if let Some(m) = &self.mlp {
            return m.mean_accuracy;
        }
        self.results.iter().map(|r| r.mean_accuracy).sum::<f64>() / self.results.len().max(1) as f64
    }

    pub fn best(&self) -> Option<&CVResult> {
        self.results.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDelta {
    pub pipeline: String,
    pub kfold: f64,
    pub logo: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub k: usize,
    pub mean_kfold: f64,
    pub mean_logo: f64,
    /// `mean_kfold - mean_logo`.
    pub mean_delta: f64,
    /// In catalog order.
    pub deltas: Vec<PipelineDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub signal_index: usize,
    pub true_class: usize,
    pub maps: Vec<AttributionMap>,
    /// Peak region (window = mask size) of each map.
    pub peak_regions: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub dataset: DatasetSummary,
    pub runs: Vec<ValidationRun>,
    pub comparison: Option<Comparison>,
    pub mlp_search: Option<Vec<TrialResult>>,
    pub occlusion: Option<OcclusionReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Copy with creation time and per-fold timings zeroed, for
    /// reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.provenance.created_unix_s = 0;
        for run in &mut r.runs {
            for res in &mut run.results {
                res.fold_seconds.iter_mut().for_each(|s| *s = 0.0);
            }
        }
        r
    }

    pub fn run(&self, strategy: &str) -> Option<&ValidationRun> {
        self.runs.iter().find(|r| r.strategy == strategy)
    }

    /// `summary.csv`: one row per (strategy, pipeline) or MLP run.
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["strategy", "rank", "model", "mean_accuracy", "mean_error", "mean_k", "fold_accuracies", "failed"])?;
        for run in &self.runs {
            for (i, r) in run.results.iter().enumerate() {
                let folds: Vec<String> = r.per_fold_accuracy.iter().map(|a| format!("{a:.6}")).collect();
                w.write_record([
                    run.strategy.clone(),
                    (i + 1).to_string(),
                    r.pipeline.clone(),
                    format!("{:.6}", r.mean_accuracy),
                    format!("{:.6}", 1.0 - r.mean_accuracy),
                    format!("{:.3}", r.mean_k()),
                    folds.join(";"),
                    r.failed.to_string(),
                ])?;
            }
            if let Some(m) = &run.mlp {
                let folds: Vec<String> = m.per_fold_accuracy.iter().map(|a| format!("{a:.6}")).collect();
                w.write_record([
                    run.strategy.clone(),
                    "1".into(),
                    "MLP".into(),
                    format!("{:.6}", m.mean_accuracy),
                    format!("{:.6}", 1.0 - m.mean_accuracy),
                    String::new(),
                    folds.join(";"),
                    (!m.failures.is_empty()).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn kfold_k(k: Option<usize>, set: &LabeledSignalSet) -> Result<usize> {
    let k = k.unwrap_or_else(|| distinct_groups(set.groups()));
    if k < 2 {
        return Err(Error::Config(format!("kfold requires k >= 2, got {k}")));
    }
    Ok(k)
}

fn plans(config: &ExperimentConfig, set: &LabeledSignalSet) -> Result<Vec<(String, FoldPlan)>> {
    let logo = || -> Result<FoldPlan> {
        if distinct_groups(set.groups()) < 2 {
            return Err(Error::Config("LOGO needs at least 2 distinct groups".into()));
        }
        make_logo(set.groups())
    };
    Ok(match config.validation {
        ValidationConfig::Kfold { k, seed } => {
            vec![("kfold".into(), make_stratified_kfold(set.labels(), kfold_k(k, set)?, seed)?)]
        }
        ValidationConfig::Logo => vec![("logo".into(), logo()?)],
        ValidationConfig::Compare { k, seed } => vec![
            ("kfold".into(), make_stratified_kfold(set.labels(), kfold_k(k, set)?, seed)?),
            ("logo".into(), logo()?),
        ],
    })
}

fn pipeline_run(strategy: String, plan: &FoldPlan, mut results: Vec<CVResult>) -> Result<ValidationRun> {
    engine::rank_results(&mut results);
    let errors: Vec<f64> = results.iter().map(|r| 1.0 - r.mean_accuracy).collect();
    Ok(ValidationRun {
        strategy,
        folds: plan.len(),
        error_summary: Some(summarize_distribution(&errors)?),
        feature_count_histogram: engine::feature_count_histogram(&results, 3)?,
        results,
        mlp: None,
    })
}

/// Per-pipeline K-fold minus LOGO accuracy, in catalog order.
pub fn compare_validations(kfold: &ValidationRun, logo: &ValidationRun, k: usize) -> Result<Comparison> {
    let mut deltas = Vec::new();
    for spec in enumerate_catalog() {
        let (Some(a), Some(b)) = (
            kfold.results.iter().find(|r| r.spec == spec),
            logo.results.iter().find(|r| r.spec == spec),
        ) else {
            continue;
        };
        deltas.push(PipelineDelta {
            pipeline: spec.id(),
            kfold: a.mean_accuracy,
            logo: b.mean_accuracy,
            delta: a.mean_accuracy - b.mean_accuracy,
        });
    }
    if deltas.is_empty() {
        if let (Some(a), Some(b)) = (&kfold.mlp, &logo.mlp) {
            deltas.push(PipelineDelta {
                pipeline: "MLP".into(),
                kfold: a.mean_accuracy,
                logo: b.mean_accuracy,
                delta: a.mean_accuracy - b.mean_accuracy,
            });
        } else {
            return Err(Error::Validation("no pipeline evaluated under both strategies".into()));
        }
    }
    let n = deltas.len() as f64;
    let mean_kfold = deltas.iter().map(|d| d.kfold).sum::<f64>() / n;
    let mean_logo = deltas.iter().map(|d| d.logo).sum::<f64>() / n;
    Ok(Comparison { k, mean_kfold, mean_logo, mean_delta: mean_kfold - mean_logo, deltas })
}

/// Runs `config` without touching the filesystem (apart from loading inputs).
pub fn execute(config: &ExperimentConfig) -> Result<(ExperimentReport, Option<StoredModel>)> {
    config.validate()?;
    let set = config.load_dataset()?;
    let options = config.engine_options();
    let mut runs = Vec::new();
    let mut mlp_search = None;
    let mut occlusion = None;
    let mut model = None;

    match &config.scope {
        Scope::Search70 | Scope::Pipeline { .. } => {
            let specs = match &config.scope {
                Scope::Pipeline { pipeline } => vec![PipelineSpec::from_id(pipeline)?],
                _ => enumerate_catalog(),
            };
            for (name, plan) in plans(config, &set)? {
                let results = engine::search_specs(&specs, &set, &plan, config.parallelism, &options)?;
                runs.push(pipeline_run(name, &plan, results)?);
            }
            if config.save_model {
                let best = runs.first().and_then(|r| r.best()).map(|r| r.spec).unwrap_or(specs[0]);
                let all: Vec<usize> = (0..set.len()).collect();
                let fold = Fold { train: all, test: vec![] };
                model = Some(StoredModel::Pipeline(engine::fit_fold(&best, &set, &fold, &options)?));
            }
        }
        Scope::Mlp { config: mcfg, search_trials } => {
            let mut mcfg = MlpConfig { seed: config.seed, ..mcfg.clone() };
            if let Some(t) = search_trials {
                let (trials, best) = mlp::random_search(set.signals(), set.labels(), set.num_classes(), &mcfg, *t, config.seed)?;
                mcfg = trials[best].config.clone();
                mlp_search = Some(trials);
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.parallelism)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            for (name, plan) in plans(config, &set)? {
                let r = pool.install(|| mlp::evaluate_mlp(set.signals(), set.labels(), set.num_classes(), &plan, &mcfg));
                runs.push(ValidationRun {
                    strategy: name,
                    folds: plan.len(),
                    results: vec![],
                    error_summary: Some(summarize_distribution(&r.per_fold_accuracy.iter().map(|a| 1.0 - a).collect::<Vec<_>>())?),
                    mlp: Some(r),
                    feature_count_histogram: BTreeMap::new(),
                });
            }
            if config.save_model {
                let out = mlp::fit_mlp(set.signals(), set.labels(), set.num_classes(), &mcfg)?;
                model = Some(StoredModel::Mlp(out.model));
            }
        }
        Scope::Occlusion { model_path, pipeline, signal_index, mask_sizes, strides, mask_value } => {
            let stored = match (model_path, pipeline) {
                (Some(p), _) => container::load(p)?,
                (None, Some(id)) => {
                    let spec = PipelineSpec::from_id(id)?;
                    let fold = Fold { train: (0..set.len()).collect(), test: vec![] };
                    StoredModel::Pipeline(engine::fit_fold(&spec, &set, &fold, &options)?)
                }
                (None, None) => return Err(Error::Config("occlusion scope needs model_path or pipeline".into())),
            };
            if *signal_index >= set.len() {
                return Err(Error::Config(format!("signal_index {signal_index} out of range (n = {})", set.len())));
            }
            let signal = set.signals().row(*signal_index).to_vec();
            let report = occlude(&stored, &signal, mask_sizes, strides, *mask_value)?;
            occlusion = Some(OcclusionReport { signal_index: *signal_index, true_class: set.labels()[*signal_index], ..report });
            if config.save_model {
                model = Some(stored);
            }
        }
    }

    let comparison = match (&config.validation, runs.iter().find(|r| r.strategy == "kfold"), runs.iter().find(|r| r.strategy == "logo")) {
        (ValidationConfig::Compare { k, .. }, Some(a), Some(b)) => Some(compare_validations(a, b, kfold_k(*k, &set)?)?),
        _ => None,
    };
    let kfold_seed = match config.validation {
        ValidationConfig::Kfold { seed, .. } | ValidationConfig::Compare { seed, .. } => Some(seed),
        ValidationConfig::Logo => None,
    };
    let report = ExperimentReport {
        schema: REPORT_SCHEMA.into(),
        config: config.clone(),
        provenance: Provenance {
            artifact: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            seed: config.seed,
            kfold_seed,
        },
        dataset: DatasetSummary {
            observations: set.len(),
            signal_len: set.signal_len(),
            classes: set.num_classes(),
            groups: set.num_groups(),
        },
        runs,
        comparison,
        mlp_search,
        occlusion,
    };
    Ok((report, model))
}

/// Occlusion grid over a stored model; peak regions use the mask size as window.
pub fn occlude(model: &StoredModel, signal: &[f64], mask_sizes: &[usize], strides: &[usize], mask_value: f64) -> Result<OcclusionReport> {
    if signal.len() != model.input_len() {
        return Err(Error::dim(model.input_len(), signal.len()));
    }
    let score = |x: &[f64]| model.scores_row(x).unwrap_or_default();
    let maps = occlusion_grid_search_with(score, signal, mask_sizes, strides, mask_value)?;
    let peak_regions = maps.iter().map(|m| attribution_peak_region(m, m.config.mask_size)).collect();
    Ok(OcclusionReport { signal_index: 0, true_class: 0, maps, peak_regions })
}

/// Writes the report files into `config.output_dir` (created if needed) and
/// returns the paths written.
pub fn write_outputs(report: &ExperimentReport, model: Option<&StoredModel>, dir: &Path, format: OutputFormat, with_plots: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        put("report.json", report.to_json()?.as_bytes())?;
    }
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf)?;
        put("summary.csv", &buf)?;
    }
    if with_plots {
        for (name, svg) in report_plots(report) {
            put(&name, svg.as_bytes())?;
        }
    }
    if let Some(m) = model {
        let p = dir.join("model.cmb");
        container::save(m, &p)?;
        written.push(p);
    }
    Ok(written)
}

fn report_plots(report: &ExperimentReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let pipeline_runs: Vec<&ValidationRun> = report.runs.iter().filter(|r| !r.results.is_empty()).collect();
    if let Some(first) = pipeline_runs.first() {
        let labels: Vec<String> = enumerate_catalog()
            .into_iter()
            .filter(|s| first.results.iter().any(|r| r.spec == *s))
            .map(|s| s.id())
            .collect();
        let series: Vec<(&str, Vec<f64>)> = pipeline_runs
            .iter()
            .map(|run| {
                let vals = labels
                    .iter()
                    .map(|l| run.results.iter().find(|r| &r.pipeline == l).map_or(0.0, |r| r.mean_accuracy))
                    .collect();
                (run.strategy.as_str(), vals)
            })
            .collect();
        out.push(("accuracy.svg".into(), plots::bar_chart("mean cross-validated accuracy", &labels, &series)));
        let hist: Vec<(usize, usize)> = first.feature_count_histogram.iter().map(|(&k, &c)| (k, c)).collect();
        if !hist.is_empty() {
            out.push(("feature_counts.svg".into(), plots::histogram(&format!("chosen feature count, top 3 ({})", first.strategy), &hist)));
        }
    }
    let boxes: Vec<(String, FiveNumber)> = report.runs.iter().filter_map(|r| r.error_summary.map(|f| (r.strategy.clone(), f))).collect();
    if !boxes.is_empty() {
        out.push(("errors.svg".into(), plots::box_plot("error distribution", &boxes)));
    }
    if let Some(o) = &report.occlusion {
        if let Some(m) = o.maps.first() {
            out.push(("attribution.svg".into(), m.to_svg(None)));
        }
    }
    out
}

/// Executes `config` and writes its outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (report, model) = execute(config)?;
    write_outputs(&report, model.as_ref(), &config.output_dir, config.format, config.plots)?;
    Ok(report)
}
