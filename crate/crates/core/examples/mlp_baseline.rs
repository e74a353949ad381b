//! Trains the MLP baseline on raw signals, writes its learning curve and
//! scores it with stratified K-fold.

use cm_automl::dataset::{generate_synthetic_shift, SyntheticShiftSpec};
use cm_automl::mlp::{evaluate_mlp, fit_mlp, MlpConfig};
use cm_automl::validation::make_stratified_kfold;

fn main() -> cm_automl::Result<()> {
    let spec = SyntheticShiftSpec { n_per_cell: 20, signal_len: 128, group_effect: 0.0, class_effect: 2.0, ..Default::default() };
    let set = generate_synthetic_shift(&spec)?;
    let config = MlpConfig { max_epochs: 60, ..Default::default() };

    let fit = fit_mlp(set.signals(), set.labels(), set.num_classes(), &config)?;
    println!("widths {:?}, {} parameters", fit.model.widths(), fit.model.num_parameters());
    println!("stopped after {} epochs ({:?}), best epoch {}", fit.curve.len(), fit.stop, fit.best_epoch);
    fit.write_curve_csv(std::io::stdout().lock())?;

    let plan = make_stratified_kfold(set.labels(), 4, 1)?;
    let cv = evaluate_mlp(set.signals(), set.labels(), set.num_classes(), &plan, &config);
    println!("4-fold accuracy {:.3} per fold {:?}", cv.mean_accuracy, cv.per_fold_accuracy);
    Ok(())
}
