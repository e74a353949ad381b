//! Builds stratified K-fold and leave-one-group-out plans and prints their
//! per-fold class and group composition.

use cm_automl::dataset::{generate_synthetic_shift, SyntheticShiftSpec};
use cm_automl::validation::{make_logo, make_stratified_kfold, FoldPlan};

fn describe(name: &str, plan: &FoldPlan, labels: &[usize], groups: &[usize]) {
    println!("{name}: {} folds", plan.len());
    for (i, fold) in plan.folds.iter().enumerate() {
        let mut classes = [0usize; 3];
        let mut held: Vec<usize> = fold.test.iter().map(|&t| groups[t]).collect();
        fold.test.iter().for_each(|&t| classes[labels[t]] += 1);
        held.sort_unstable();
        held.dedup();
        println!("  fold {i}: {} test, per class {classes:?}, groups {held:?}", fold.test.len());
    }
}

fn main() -> cm_automl::Result<()> {
    let set = generate_synthetic_shift(&SyntheticShiftSpec { n_per_cell: 10, ..Default::default() })?;
    describe("stratified 4-fold", &make_stratified_kfold(set.labels(), 4, 1)?, set.labels(), set.groups());
    describe("leave-one-group-out", &make_logo(set.groups())?, set.labels(), set.groups());
    Ok(())
}
