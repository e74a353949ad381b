use std::process::Command;

use cm_automl::classifiers::{ClassifierKind, TrainedClassifier};
use cm_automl::container::{self, StoredModel};
use cm_automl::dataset::{generate_synthetic_shift, LabeledSignalSet, SyntheticShiftSpec};
use cm_automl::engine::{evaluate_pipeline, fit_pipeline, inner_plan, k_grid, EngineOptions, PipelineSpec};
use cm_automl::experiment::{execute, ExperimentConfig, ExperimentReport};
use cm_automl::features::{ExtractorSpec, FeMethod};
use cm_automl::selection::FsMethod;
use cm_automl::validation::{make_logo, make_stratified_kfold};
use cm_automl::Matrix;

fn small_set() -> LabeledSignalSet {
    generate_synthetic_shift(&SyntheticShiftSpec { n_per_cell: 6, signal_len: 64, ..Default::default() }).unwrap()
}

#[test]
fn k_grid_reference_values() {
    assert_eq!(k_grid(1), vec![1]);
    assert_eq!(k_grid(8), (1..=8).collect::<Vec<_>>());
    assert_eq!(k_grid(512)[29..], [30, 45, 68, 102, 153, 230, 345, 512]);
}

#[test]
fn single_feature_pipeline_skips_the_search() {
    // PCA capped at one component yields p = 1, so k is fixed to 1.
    let y: Vec<usize> = (0..30).map(|i| i % 2).collect();
    let rows: Vec<Vec<f64>> = y.iter().enumerate().map(|(i, &c)| vec![c as f64 * 4.0 + (i % 5) as f64 * 0.1, c as f64 * 2.0 - (i % 3) as f64 * 0.1]).collect();
    let set = LabeledSignalSet::new(
        Matrix::from_rows(&rows).unwrap(),
        y,
        (0..30).map(|i| i % 3).collect(),
        1.0,
        vec!["a".into(), "b".into()],
        vec!["g0".into(), "g1".into(), "g2".into()],
    )
    .unwrap();
    let spec = PipelineSpec::new(ExtractorSpec::new(FeMethod::Pca).with_max_components(1), FsMethod::Pearson, ClassifierKind::LdaMahal);
    let p = fit_pipeline(&spec, &set, &inner_plan(&set, &EngineOptions::default()).unwrap(), &EngineOptions::default()).unwrap();
    assert_eq!(p.extractor.num_features(), 1);
    assert_eq!(p.k, 1);
    assert_eq!(p.predict(set.signals()).unwrap(), set.labels());
}

#[test]
fn chosen_k_is_on_the_grid_and_every_fold_is_scored() {
    let set = small_set();
    let plan = make_logo(set.groups()).unwrap();
    for fe in [FeMethod::StatMom, FeMethod::Bfc, FeMethod::Pca] {
        let spec = PipelineSpec::new(fe, FsMethod::Spearman, ClassifierKind::Svm);
        let r = evaluate_pipeline(&spec, &set, &plan, &EngineOptions::default());
        assert!(!r.failed, "{:?}", r.failures);
        assert_eq!(r.per_fold_accuracy.len(), 4);
        assert!(r.chosen_k.iter().all(|&k| k >= 1));
        assert!(r.per_fold_accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn pipeline_container_round_trip_preserves_predictions() {
    let set = small_set();
    let spec = PipelineSpec::from_id("ALA+RELIEFF+SVM").unwrap();
    let p = fit_pipeline(&spec, &set, &inner_plan(&set, &EngineOptions::default()).unwrap(), &EngineOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cmb");
    container::save(&StoredModel::Pipeline(p.clone()), &path).unwrap();
    let StoredModel::Pipeline(back) = container::load(&path).unwrap() else { panic!("wrong payload kind") };
    assert_eq!(back, p);
    assert_eq!(back.scores(set.signals()).unwrap(), p.scores(set.signals()).unwrap());
}

#[test]
fn svm_separates_xor() {
    let mut pts = Vec::new();
    let mut y = Vec::new();
    for i in 0..80 {
        let (a, b) = ((i % 9) as f64 / 9.0 + 0.05, (i % 7) as f64 / 7.0 + 0.05);
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            pts.push(vec![sx * a, sy * b]);
            y.push(usize::from(sx * sy > 0.0));
        }
    }
    let x = Matrix::from_rows(&pts).unwrap();
    let m = TrainedClassifier::fit(ClassifierKind::Svm, &x, &y, 2).unwrap();
    let acc = m.predict(&x).unwrap().iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
    assert!(acc >= 0.95, "{acc}");
}

const PIPELINE_CONFIG: &str = r#"{
    "dataset": {"source": "synthetic", "spec": {"num_classes": 3, "num_groups": 4, "n_per_cell": 6,
        "signal_len": 64, "class_effect": 1.0, "group_effect": 3.0, "noise_std": 1.0, "seed": 7}},
    "validation": {"kind": "compare", "k": 4, "seed": 1},
    "scope": {"kind": "pipeline", "pipeline": "StatMom+Pearson+LDAMahal"},
    "save_model": true
}"#;

#[test]
fn experiment_executes_and_is_reproducible() {
    let cfg = ExperimentConfig::from_json(PIPELINE_CONFIG).unwrap();
    let (a, model) = execute(&cfg).unwrap();
    let (b, _) = execute(&cfg).unwrap();
    assert_eq!(a.runs.len(), 2);
    assert!(a.comparison.is_some());
    assert!(matches!(model, Some(StoredModel::Pipeline(_))));
    assert_eq!(a.without_timing().to_json().unwrap(), b.without_timing().to_json().unwrap());
    let back: ExperimentReport = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(back.runs[0].results[0].pipeline, "StatMom+Pearson+LDAMahal");
}

#[test]
fn kfold_plan_is_shared_by_seed() {
    let set = small_set();
    assert_eq!(make_stratified_kfold(set.labels(), 4, 9).unwrap(), make_stratified_kfold(set.labels(), 4, 9).unwrap());
}

#[test]
fn cli_generate_run_inspect_occlude() {
    let bin = env!("CARGO_BIN_EXE_cm-automl");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    std::fs::write(&spec, r#"{"num_classes": 2, "num_groups": 2, "n_per_cell": 8, "signal_len": 64,
        "class_effect": 1.5, "group_effect": 0.0, "noise_std": 1.0, "seed": 3}"#)
    .unwrap();
    let ok = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();

    ok(&["generate", "--config", &s(&spec), "--out", &s(&d.join("data"))]);
    let csv = d.join("data/synthetic.csv");
    assert!(csv.exists() && d.join("data/synthetic.meta.json").exists());

    let cfg = d.join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"dataset": {{"source": "csv", "path": {:?}}}, "validation": {{"kind": "logo"}},
                "scope": {{"kind": "pipeline", "pipeline": "NoFE+Pearson+LDAMahal"}}, "save_model": true}}"#,
            s(&csv)
        ),
    )
    .unwrap();
    let out = d.join("out");
    let stdout = ok(&["run", "--config", &s(&cfg), "--out", &s(&out), "--seed", "2", "--parallelism", "1", "--format", "both"]);
    assert!(stdout.contains("NoFE+Pearson+LDAMahal"));
    assert!(out.join("report.json").exists() && out.join("summary.csv").exists());

    assert!(ok(&["inspect", &s(&out.join("report.json"))]).contains("report_v1"));
    assert!(ok(&["inspect", &s(&out.join("model.cmb"))]).contains("pipeline NoFE+Pearson+LDAMahal"));

    let occ = d.join("occ");
    ok(&[
        "occlude", "--model", &s(&out.join("model.cmb")), "--data", &s(&csv), "--index", "3",
        "--mask-sizes", "8,16", "--strides", "4,8", "--out", &s(&occ), "--format", "json",
    ]);
    assert!(occ.join("occlusion.json").exists());

    let bad = Command::new(bin).args(["run", "--config", &s(&d.join("missing.json"))]).output().unwrap();
    assert!(!bad.status.success());
}
