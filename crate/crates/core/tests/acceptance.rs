//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line and
//! then asserts, so `cargo test --test acceptance -- --nocapture` shows the
//! whole table.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cm_automl::classifiers::{train_lda_mahal, train_svm_rbf, SvmParams};
use cm_automl::dataset::{generate_synthetic_shift, LabeledSignalSet, SyntheticShiftSpec};
use cm_automl::engine::{
    enumerate_catalog, exhaustive_search, feature_count_histogram, fit_fold, results_to_json, CVResult, EngineOptions,
    PipelineSpec,
};
use cm_automl::interpret::{attribution_peak_region, occlusion_grid_search, occlusion_map, OcclusionConfig};
use cm_automl::mlp::{block_width, build_with_widths, fit_mlp, gradient_check, randomize_output, MlpConfig};
use cm_automl::selection::{rank_pearson, rank_relieff, rank_spearman};
use cm_automl::validation::{accuracy, compute_metrics, make_logo, make_stratified_kfold};
use cm_automl::Matrix;

fn verdict(n: u32, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) {
    let ok = ok && elapsed < limit;
    println!(
        "criterion {n:>2}: {} | {name} | {detail} | {:.2}s (limit {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn mean_accuracy(results: &[CVResult]) -> f64 {
    results.iter().map(|r| r.mean_accuracy).sum::<f64>() / results.len() as f64
}

fn find<'a>(results: &'a [CVResult], id: &str) -> &'a CVResult {
    results.iter().find(|r| r.pipeline == id).expect("pipeline present")
}

/// Mean K-fold (k = 4, seed 1) and LOGO results over all 70 pipelines.
fn kfold_vs_logo(spec: &SyntheticShiftSpec) -> (Vec<CVResult>, Vec<CVResult>) {
    let set = generate_synthetic_shift(spec).unwrap();
    let opts = EngineOptions::default();
    let kf = exhaustive_search(&set, &make_stratified_kfold(set.labels(), 4, 1).unwrap(), 0, &opts).unwrap();
    let logo = exhaustive_search(&set, &make_logo(set.groups()).unwrap(), 0, &opts).unwrap();
    (kf, logo)
}

#[test]
fn criterion_01_catalog_completeness() {
    let t = Instant::now();
    let cat = enumerate_catalog();
    let ids: HashSet<String> = cat.iter().map(PipelineSpec::id).collect();
    let fe: HashSet<_> = cat.iter().map(|s| s.extractor.method).collect();
    let fs: HashSet<_> = cat.iter().map(|s| s.selector).collect();
    let clf: HashSet<_> = cat.iter().map(|s| s.classifier).collect();
    let ok = cat.len() == 70 && ids.len() == 70 && fe.len() == 7 && fs.len() == 5 && clf.len() == 2;
    verdict(
        1,
        "catalog completeness",
        ok,
        t.elapsed(),
        Duration::from_secs(1),
        format!("{} specs, {} distinct, {}x{}x{}", cat.len(), ids.len(), fe.len(), fs.len(), clf.len()),
    );
}

#[test]
fn criterion_02_domain_shift_reproduction() {
    let t = Instant::now();
    let spec = SyntheticShiftSpec::default();
    assert!(spec.group_effect >= 3.0 * spec.noise_std);
    let (kf, logo) = kfold_vs_logo(&spec);
    let best = kf.iter().map(|r| r.mean_accuracy).fold(0.0, f64::max);
    let delta = mean_accuracy(&kf) - mean_accuracy(&logo);
    let raw_drop = find(&kf, "NoFE+NoFS+SVM").mean_accuracy - find(&logo, "NoFE+NoFS+SVM").mean_accuracy;
    verdict(
        2,
        "domain-shift reproduction",
        best >= 0.95 && delta >= 0.10 && raw_drop >= 0.15,
        t.elapsed(),
        Duration::from_secs(600),
        format!("best K-fold {best:.3} (>= 0.95), mean delta {delta:.3} (>= 0.10), NoFE+NoFS+SVM drop {raw_drop:.3} (>= 0.15)"),
    );
}

#[test]
fn criterion_03_no_shift_control() {
    let t = Instant::now();
    let spec = SyntheticShiftSpec { group_effect: 0.0, ..Default::default() };
    let (kf, logo) = kfold_vs_logo(&spec);
    let delta = mean_accuracy(&kf) - mean_accuracy(&logo);
    verdict(
        3,
        "no-shift control",
        delta.abs() < 0.05,
        t.elapsed(),
        Duration::from_secs(600),
        format!("|mean K-fold - mean LOGO| = {:.4} (< 0.05)", delta.abs()),
    );
}

#[test]
fn criterion_04_metric_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let c = rng.random_range(2..6);
        let folds = rng.random_range(1..6);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let f: Vec<usize> = (0..n).map(|_| rng.random_range(0..folds)).collect();
        let m = compute_metrics(&y, &p, &f).unwrap();
        let wrong = y.iter().zip(&p).filter(|(a, b)| a != b).count();
        ok &= m.acc + m.err == 1.0 && m.err == wrong as f64 / n as f64 && m.n == n;
    }
    verdict(4, "metric identity", ok, t.elapsed(), Duration::from_secs(1), "1000 random prediction vectors".into());
}

#[test]
fn criterion_05_stratification() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    for trial in 0..100 {
        let c = rng.random_range(2..6);
        // Every class needs at least 8 members so that k = 8 is feasible.
        let mut y: Vec<usize> = (0..c).flat_map(|l| std::iter::repeat_n(l, 8)).collect();
        let extra = rng.random_range(0..120);
        y.extend((0..extra).map(|_| rng.random_range(0..c)));
        for k in 2..=8 {
            let plan = make_stratified_kfold(&y, k, trial).unwrap();
            let mut seen = vec![0usize; y.len()];
            for fold in &plan.folds {
                fold.test.iter().for_each(|&i| seen[i] += 1);
            }
            ok &= plan.folds.len() == k && seen.iter().all(|&s| s == 1);
            for class in 0..c {
                let counts: Vec<usize> =
                    plan.folds.iter().map(|f| f.test.iter().filter(|&&i| y[i] == class).count()).collect();
                ok &= counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1;
            }
        }
        let g_count = rng.random_range(2..7);
        let groups: Vec<usize> = (0..y.len()).map(|i| (i * 7 + trial as usize) % g_count).collect();
        ok &= make_logo(&groups).unwrap().folds.len() == g_count;
    }
    let three = make_logo(&[0, 0, 1, 1, 2, 2, 0, 1]).unwrap();
    ok &= three.folds.len() == 3;
    verdict(
        5,
        "stratification",
        ok,
        t.elapsed(),
        Duration::from_secs(5),
        "100 label vectors x k in 2..=8, per-class spread <= 1; LOGO folds = distinct groups".into(),
    );
}

/// Two-pass sample correlation; 0 for a constant column.
fn oracle_corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Doubled rank by counting: 2 + 2 #smaller + (#equal - 1), an integer.
fn oracle_doubled_ranks(a: &[f64]) -> Vec<i128> {
    a.iter()
        .map(|&v| {
            let less = a.iter().filter(|&&w| w < v).count() as i128;
            let eq = a.iter().filter(|&&w| w == v).count() as i128;
            2 + 2 * less + eq - 1
        })
        .collect()
}

/// Exact squared Spearman correlation of doubled ranks against a 0/1
/// indicator, as the fraction `cov^2 / (var_r var_i)` of integers.
fn oracle_spearman_sq(r: &[i128], ind: &[i128]) -> (i128, i128) {
    let n = r.len() as i128;
    let (sr, si) = (r.iter().sum::<i128>(), ind.iter().sum::<i128>());
    let cov = n * r.iter().zip(ind).map(|(a, b)| a * b).sum::<i128>() - sr * si;
    let var_r = n * r.iter().map(|a| a * a).sum::<i128>() - sr * sr;
    let var_i = n * ind.iter().map(|a| a * a).sum::<i128>() - si * si;
    if var_r == 0 || var_i == 0 {
        (0, 1)
    } else {
        (cov * cov, var_r * var_i)
    }
}

/// Features ordered by max |r| against one-vs-rest indicators, ties to the
/// lower index. Spearman scores are compared as exact fractions.
fn oracle_order(x: &Matrix, y: &[usize], c: usize, spearman: bool) -> (Vec<usize>, Vec<f64>) {
    let indicators: Vec<Vec<f64>> =
        (0..c).map(|class| y.iter().map(|&l| if l == class { 1.0 } else { 0.0 }).collect()).collect();
    if spearman {
        let exact: Vec<(i128, i128)> = (0..x.cols())
            .map(|j| {
                let r = oracle_doubled_ranks(&x.column(j));
                indicators
                    .iter()
                    .map(|ind| oracle_spearman_sq(&r, &ind.iter().map(|&v| v as i128).collect::<Vec<_>>()))
                    .fold((0, 1), |best, q| if q.0 * best.1 > best.0 * q.1 { q } else { best })
            })
            .collect();
        let mut order: Vec<usize> = (0..x.cols()).collect();
        order.sort_by(|&a, &b| (exact[b].0 * exact[a].1).cmp(&(exact[a].0 * exact[b].1)).then(a.cmp(&b)));
        let scores = exact.iter().map(|&(num, den)| (num as f64 / den as f64).sqrt()).collect();
        return (order, scores);
    }
    let scores: Vec<f64> = (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            indicators.iter().map(|ind| oracle_corr(&col, ind).abs()).fold(0.0, f64::max)
        })
        .collect();
    let mut order: Vec<usize> = (0..x.cols()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    (order, scores)
}

#[test]
fn criterion_06_selector_oracles() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    for _ in 0..50 {
        let c = rng.random_range(2..5);
        let y: Vec<usize> = (0..20).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        for spearman in [false, true] {
            let r = if spearman { rank_spearman(&x, &y, c) } else { rank_pearson(&x, &y, c) }.unwrap();
            let (order, scores) = oracle_order(&x, &y, c, spearman);
            ok &= r.order == order;
            ok &= (0..5).all(|j| (r.score_of(j).unwrap() - scores[j]).abs() < 1e-12);
        }
    }
    // Hand trace, k = 1, Manhattan distance on [0,1]-scaled features: each
    // point's nearest hit differs only in f2 and its nearest miss only in f1,
    // so every update is +1 on f1 and -1 on f2, averaged over 4 points.
    let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
    let relief = rank_relieff(&x, &[0, 0, 1, 1], 2, 1).unwrap();
    let hand = [1.0, -1.0];
    let relief_ok = (0..2).all(|j| (relief.score_of(j).unwrap() - hand[j]).abs() < 1e-12) && relief.order == vec![0, 1];
    verdict(
        6,
        "selector oracle equivalence",
        ok && relief_ok,
        t.elapsed(),
        Duration::from_secs(10),
        format!("Pearson/Spearman on 50 matrices {ok}; RELIEFF W = {:?}", [relief.score_of(0).unwrap(), relief.score_of(1).unwrap()]),
    );
}

#[test]
fn criterion_07_classifier_properties() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let y: Vec<usize> = pts.iter().map(|p| usize::from(p[0] * p[1] > 0.0)).collect();
    let x = Matrix::from_rows(&pts).unwrap();
    let params = SvmParams::default();
    let xor = train_svm_rbf(&x, &y, 2, &params).unwrap();
    let xor_acc = accuracy(&y, &xor.predict(&x).unwrap());

    let means = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
    let rows: Vec<Vec<f64>> =
        (0..120).map(|i| means[i % 4].iter().map(|m| m + 0.6 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let y4: Vec<usize> = (0..120).map(|i| i % 4).collect();
    let four = train_svm_rbf(&Matrix::from_rows(&rows).unwrap(), &y4, 4, &params).unwrap();
    let mut worst = 0.0f64;
    for m in xor.machines.iter().chain(&four.machines) {
        for &a in &m.alphas {
            worst = worst.max(-a).max(a - params.c_reg);
        }
        let eq: f64 = m.alphas.iter().zip(&m.targets).map(|(a, t)| a * t).sum();
        worst = worst.max(eq.abs()).max(m.dual_residual.abs());
    }

    // Three classes 10 standard deviations apart in 4 dimensions.
    let centres = [[0.0; 4], [10.0, 0.0, 0.0, 0.0], [0.0, 10.0, 0.0, 0.0]];
    let draw = |rng: &mut ChaCha8Rng, n: usize| {
        let rows: Vec<Vec<f64>> =
            (0..n).map(|i| centres[i % 3].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        (Matrix::from_rows(&rows).unwrap(), (0..n).map(|i| i % 3).collect::<Vec<_>>())
    };
    let (xtr, ytr) = draw(&mut rng, 150);
    let (xte, yte) = draw(&mut rng, 300);
    let lda = train_lda_mahal(&xtr, &ytr, 3, None).unwrap();
    let lda_acc = accuracy(&yte, &lda.predict(&xte).unwrap());

    verdict(
        7,
        "classifier properties",
        xor_acc >= 0.95 && four.machines.len() == 6 && worst <= 1e-6 && lda_acc >= 0.99,
        t.elapsed(),
        Duration::from_secs(30),
        format!(
            "XOR train acc {xor_acc:.3}; {} machines for 4 classes; worst dual violation {worst:.1e}; LDA held-out acc {lda_acc:.3}",
            four.machines.len()
        ),
    );
}

#[test]
fn criterion_08_mlp_correctness() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let yg: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let mut small = build_with_widths(&[7, 6, 5], 5, 3, 21);
    randomize_output(&mut small, 22);
    let g = gradient_check(&small, &Matrix::from_rows(&rows).unwrap(), &yg, 1e-4, 1e-5).unwrap();

    let width = block_width(300, 2);

    // Two linearly separable classes in 20 dimensions, held-out evaluation.
    let draw = |rng: &mut ChaCha8Rng, n: usize| {
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| {
                (0..20)
                    .map(|j| {
                        let shift = if j < 2 { 2.0 * c as f64 - 1.0 } else { 0.0 };
                        shift + 0.5 * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect()
            })
            .collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    };
    let (xtr, ytr) = draw(&mut rng, 400);
    let (xte, yte) = draw(&mut rng, 400);
    let cfg = MlpConfig::default();
    let budgets = cfg.max_epochs == 200
        && cfg.learning_rate(0) == 0.004
        && cfg.l2 == 1e-4
        && cfg.minibatch == 64
        && cfg.dropout == 0.4;
    let fit = fit_mlp(&xtr, &ytr, 2, &cfg).unwrap();
    let acc = accuracy(&yte, &fit.model.predict(&xte).unwrap());

    verdict(
        8,
        "MLP correctness",
        g.max_relative_error < 1e-4 && width == 100 && budgets && acc >= 0.95,
        t.elapsed(),
        Duration::from_secs(120),
        format!(
            "gradient rel. err {:.2e} over {} parameters; width(300, 2) = {width}; held-out acc {acc:.3} after {} epochs",
            g.max_relative_error,
            g.parameters_checked,
            fit.curve.len()
        ),
    );
}

/// Depends only on the mean of samples [100, 200).
fn region_classifier(x: &[f64]) -> Vec<f64> {
    let m = x[100..200].iter().sum::<f64>() / 100.0;
    let p = 1.0 / (1.0 + (-10.0 * (m - 0.5)).exp());
    vec![1.0 - p, p]
}

#[test]
fn criterion_09_occlusion_localization() {
    let t = Instant::now();
    let signal: Vec<f64> = (0..1000).map(|i| if (100..200).contains(&i) { 1.0 } else { 0.0 }).collect();
    let map = occlusion_map(region_classifier, &signal, &OcclusionConfig::new(50, 10)).unwrap();
    let frac = map.positive_mass_fraction(100, 200);

    let grid = [5, 10, 20, 50, 100, 200, 500, 1000];
    let maps = occlusion_grid_search(region_classifier, &signal, &grid, &grid).unwrap();
    let mut misplaced = Vec::new();
    for m in &maps {
        let w = m.config.mask_size;
        let (s, e) = attribution_peak_region(m, w);
        if (s as i64) < 100 - w as i64 || e > 200 + w {
            misplaced.push((w, m.config.stride, s, e));
        }
    }
    verdict(
        9,
        "occlusion localization",
        frac >= 0.8 && misplaced.is_empty() && !maps.is_empty(),
        t.elapsed(),
        Duration::from_secs(60),
        format!("mass in [100,200) = {frac:.3}; {} grid maps, misplaced peaks {misplaced:?}", maps.len()),
    );
}

fn small_shift_set() -> LabeledSignalSet {
    generate_synthetic_shift(&SyntheticShiftSpec { n_per_cell: 8, signal_len: 128, ..Default::default() }).unwrap()
}

#[test]
fn criterion_10_leakage_and_determinism() {
    let t = Instant::now();
    let set = small_shift_set();
    let opts = EngineOptions::default();
    let plan = make_stratified_kfold(set.labels(), 4, 3).unwrap();
    let fold = &plan.folds[1];

    // Replace every outer-test observation with noise and a rotated label.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut signals = set.signals().clone();
    let mut labels = set.labels().to_vec();
    for &i in &fold.test {
        signals.row_mut(i).iter_mut().for_each(|v| *v = 50.0 * rng.sample::<f64, _>(StandardNormal));
        labels[i] = (labels[i] + 1) % set.num_classes();
    }
    let mutated = LabeledSignalSet::new(
        signals,
        labels,
        set.groups().to_vec(),
        set.sample_rate,
        set.class_names().to_vec(),
        set.group_names().to_vec(),
    )
    .unwrap();

    let mut leaks = Vec::new();
    for spec in enumerate_catalog() {
        let mut a = fit_fold(&spec, &set, fold, &opts).unwrap();
        let mut b = fit_fold(&spec, &mutated, fold, &opts).unwrap();
        a.metadata = Default::default();
        b.metadata = Default::default();
        if a != b {
            leaks.push(spec.id());
        }
    }

    let serial = results_to_json(&exhaustive_search(&set, &plan, 1, &opts).unwrap(), false).unwrap();
    let parallel = results_to_json(&exhaustive_search(&set, &plan, 8, &opts).unwrap(), false).unwrap();
    verdict(
        10,
        "leakage and determinism",
        leaks.is_empty() && serial == parallel,
        t.elapsed(),
        Duration::from_secs(300),
        format!("pipelines affected by test mutation {leaks:?}; ranked JSON identical at parallelism 1 and 8: {}", serial == parallel),
    );
}

#[test]
fn criterion_11_feature_count_finding() {
    let t = Instant::now();
    // 3 classes; class c shifts feature `informative[c]` by 3; 97 pure-noise features.
    let informative = [17usize, 54, 88];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 120;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&c| {
            let mut r: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
            r[informative[c]] += 3.0;
            r
        })
        .collect();
    let set = LabeledSignalSet::new(
        Matrix::from_rows(&rows).unwrap(),
        labels,
        (0..n).map(|i| i % 4).collect(),
        1.0,
        (0..3).map(|c| format!("class{c}")).collect(),
        (0..4).map(|g| format!("group{g}")).collect(),
    )
    .unwrap();
    let plan = make_stratified_kfold(set.labels(), 5, 1).unwrap();
    let results = exhaustive_search(&set, &plan, 0, &EngineOptions::default()).unwrap();
    let hist: BTreeMap<usize, usize> = feature_count_histogram(&results, 3).unwrap();
    let total: usize = hist.values().sum();
    let low: usize = hist.iter().filter(|(&k, _)| k <= 20).map(|(_, &c)| c).sum();
    let frac = low as f64 / total as f64;
    let top: Vec<&str> = results.iter().take(3).map(|r| r.pipeline.as_str()).collect();
    verdict(
        11,
        "feature-count finding",
        frac >= 0.9,
        t.elapsed(),
        Duration::from_secs(300),
        format!("top-3 {top:?}; k histogram {hist:?}; mass at k <= 20 = {frac:.3} (>= 0.90)"),
    );
}
