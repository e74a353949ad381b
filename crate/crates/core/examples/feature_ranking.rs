//! Ranks statistical-moment features with every selector.

use cm_automl::dataset::{generate_synthetic_shift, SyntheticShiftSpec};
use cm_automl::features::{fit_extractor, ExtractorSpec, FeMethod};
use cm_automl::selection::{rank, FsMethod};

fn main() -> cm_automl::Result<()> {
    let spec = SyntheticShiftSpec { n_per_cell: 10, group_effect: 0.0, ..Default::default() };
    let set = generate_synthetic_shift(&spec)?;
    let fitted = fit_extractor(&ExtractorSpec::new(FeMethod::StatMom), &set)?;
    let features = fitted.apply(set.signals())?;
    for method in FsMethod::ALL {
        let ranking = rank(method, &features.values, set.labels(), set.num_classes())?;
        let top: Vec<&str> = ranking.top(5).iter().map(|&f| features.feature_names[f].as_str()).collect();
        println!("{:<8} top 5: {}", method.id(), top.join(", "));
    }
    Ok(())
}
