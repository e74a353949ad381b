//! Runs all 70 pipelines under stratified K-fold and prints the ranking and
//! the chosen-feature-count histogram of the top three.
//!
//! `cargo run --release --example exhaustive_search`

use cm_automl::dataset::{generate_synthetic_shift, SyntheticShiftSpec};
use cm_automl::engine::{exhaustive_search, feature_count_histogram, EngineOptions};
use cm_automl::validation::make_stratified_kfold;

fn main() -> cm_automl::Result<()> {
    let spec = SyntheticShiftSpec { n_per_cell: 15, signal_len: 256, ..Default::default() };
    let set = generate_synthetic_shift(&spec)?;
    let plan = make_stratified_kfold(set.labels(), 4, 1)?;
    let results = exhaustive_search(&set, &plan, 0, &EngineOptions::default())?;
    for (i, r) in results.iter().enumerate().take(10) {
        println!("{:>2}. {:<26} {:.3}  k per fold {:?}", i + 1, r.pipeline, r.mean_accuracy, r.chosen_k);
    }
    let failed = results.iter().filter(|r| r.failed).count();
    println!("{} pipelines, {failed} failed", results.len());
    println!("top-3 chosen k histogram: {:?}", feature_count_histogram(&results, 3)?);
    Ok(())
}
