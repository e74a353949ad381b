//! Fits every feature extractor on one corpus and traces a feature back to
//! the signal region it summarizes.

use cm_automl::dataset::{generate_synthetic_shift, SyntheticShiftSpec};
use cm_automl::features::{fit_extractor, ExtractorSpec, FeMethod};

fn main() -> cm_automl::Result<()> {
    let set = generate_synthetic_shift(&SyntheticShiftSpec { n_per_cell: 10, ..Default::default() })?;
    for method in FeMethod::ALL {
        let fitted = fit_extractor(&ExtractorSpec::new(method), &set)?;
        let features = fitted.apply(set.signals())?;
        println!(
            "{:<8} {:>4} features, first {:<12} traced to {:?}",
            fitted.id(),
            features.num_features(),
            features.feature_names[0],
            fitted.trace_feature(0)?
        );
        if let Some(ratio) = fitted.explained_variance_ratio() {
            println!("         first 3 components explain {:.3}", ratio.iter().take(3).sum::<f64>());
        }
    }
    Ok(())
}
