//! Compares K-fold with leave-one-group-out accuracy through the experiment
//! runner, the way the CLI `run` command does.
//!
//! `cargo run --release --example domain_shift -- [out_dir]`

use cm_automl::experiment::{run_experiment, ExperimentConfig};

const CONFIG: &str = r#"{
    "dataset": {"source": "synthetic", "spec": {"num_classes": 3, "num_groups": 4, "n_per_cell": 20,
        "signal_len": 256, "class_effect": 1.0, "group_effect": 3.0, "noise_std": 1.0, "seed": 7}},
    "validation": {"kind": "compare", "k": 4, "seed": 1},
    "scope": {"kind": "search70"},
    "format": "both"
}"#;

fn main() -> cm_automl::Result<()> {
    let mut config = ExperimentConfig::from_json(CONFIG)?;
    if let Some(dir) = std::env::args().nth(1) {
        config.output_dir = dir.into();
    }
    let report = run_experiment(&config)?;
    let cmp = report.comparison.as_ref().expect("compare mode");
    println!("mean K-fold {:.3}, mean LOGO {:.3}, drop {:.3}", cmp.mean_kfold, cmp.mean_logo, cmp.mean_delta);
    let mut worst = cmp.deltas.clone();
    worst.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    for d in worst.iter().take(5) {
        println!("  {:<26} {:.3} -> {:.3}", d.pipeline, d.kfold, d.logo);
    }
    println!("report and plots in {}", config.output_dir.display());
    Ok(())
}
