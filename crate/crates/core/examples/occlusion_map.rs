//! Trains one pipeline and occludes a test signal to find the region the
//! prediction depends on; the generator places the class signature there.
//!
//! `cargo run --release --example occlusion_map -- [out.svg]`

use cm_automl::dataset::{generate_synthetic_shift, SyntheticShiftSpec};
use cm_automl::engine::{fit_fold, EngineOptions, PipelineSpec};
use cm_automl::interpret::{attribution_peak_region, occlusion_map, OcclusionConfig};
use cm_automl::validation::make_stratified_kfold;

fn main() -> cm_automl::Result<()> {
    let spec = SyntheticShiftSpec { n_per_cell: 15, group_effect: 0.0, class_effect: 2.0, ..Default::default() };
    let set = generate_synthetic_shift(&spec)?;
    let plan = make_stratified_kfold(set.labels(), 4, 1)?;
    let fold = &plan.folds[0];
    let pipeline = fit_fold(&PipelineSpec::from_id("NoFE+Pearson+LDAMahal")?, &set, fold, &EngineOptions::default())?;

    let index = fold.test[0];
    let signal = set.signals().row(index);
    let cfg = OcclusionConfig::new(32, 8);
    let map = occlusion_map(|x: &[f64]| pipeline.scores_row(x).expect("signal length"), signal, &cfg)?;
    let (s, e) = spec.signature_window();
    let peak = attribution_peak_region(&map, cfg.mask_size);
    println!("true class {}, predicted {}", set.labels()[index], map.predicted_class);
    println!("signature [{s}, {e}), peak attribution window {peak:?}");
    println!("positive attribution mass inside the signature {:.3}", map.positive_mass_fraction(s, e));
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, map.to_svg(Some(signal)))?;
        println!("map written to {path}");
    }
    Ok(())
}
