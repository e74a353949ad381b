//! Generates the synthetic domain-shift corpus and writes it as CSV plus sidecar.
//!
//! `cargo run --example generate_corpus -- [out_dir]`

use std::path::PathBuf;

use cm_automl::dataset::{generate_synthetic_shift, load_signal_set, write_signal_set, SignalFormat, SyntheticShiftSpec};

fn main() -> cm_automl::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let spec = SyntheticShiftSpec::default();
    let set = generate_synthetic_shift(&spec)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join("synthetic.csv");
    write_signal_set(&set, &path)?;

    let back = load_signal_set(&path, SignalFormat::Csv)?;
    assert_eq!(back, set);
    let (s, e) = spec.signature_window();
    println!(
        "{} signals of length {}: {} classes x {} groups, class signature in [{s}, {e})",
        set.len(),
        set.signal_len(),
        set.num_classes(),
        set.num_groups()
    );
    println!("written to {}", path.display());
    Ok(())
}
