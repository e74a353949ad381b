use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cm_automl::container::{self, StoredModel};
use cm_automl::dataset::{generate_synthetic_shift, load_signal_set, write_signal_set, SignalFormat, SyntheticShiftSpec};
use cm_automl::experiment::{self, ExperimentConfig, ExperimentReport, OutputFormat};
use cm_automl::{Error, Result};

#[derive(Parser)]
#[command(name = "cm-automl", version, about = "AutoML pipeline search for 1-D sensor signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic domain-shift corpus as CSV plus metadata sidecar.
    Generate {
        /// JSON synthetic spec; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the group (domain) effect amplitude.
        #[arg(long)]
        group_effect: Option<f64>,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Summarize a report.json or a model container.
    Inspect {
        path: PathBuf,
        /// Number of ranked entries to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        format: OutputFormat,
    },
    /// Occlusion maps of one observation under a persisted model.
    Occlude {
        #[arg(long)]
        model: PathBuf,
        /// Signal CSV in the ingestion format.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100,200,500,1000")]
        mask_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100,200,500,1000")]
        strides: Vec<usize>,
        #[arg(long, default_value_t = 0.0)]
        mask_value: f64,
        #[arg(long, default_value = "occlusion")]
        out: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
        format: OutputFormat,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn thread_pool(parallelism: Option<usize>) -> Result<()> {
    if let Some(n) = parallelism {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed, group_effect, name } => {
            let mut spec: SyntheticShiftSpec = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(format!("invalid synthetic spec: {e}")))?,
                None => SyntheticShiftSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(g) = group_effect {
                spec.group_effect = g;
            }
            let set = generate_synthetic_shift(&spec)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("{name}.csv"));
            write_signal_set(&set, &path)?;
            println!("wrote {} observations x {} samples to {}", set.len(), set.signal_len(), path.display());
        }
        Command::Run { config, out, seed, parallelism, format } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            if let Some(f) = format {
                cfg.format = f;
            }
            let report = experiment::run_experiment(&cfg)?;
            print_report(&report, 10);
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::Inspect { path, top, format } => {
            let bytes = std::fs::read(&path)?;
            if bytes.starts_with(container::MAGIC) {
                print_model(&container::decode(&bytes)?);
            } else {
                let report: ExperimentReport = serde_json::from_slice(&bytes)?;
                match format {
                    OutputFormat::Csv => report.write_summary_csv(std::io::stdout())?,
                    _ => print_report(&report, top),
                }
            }
        }
        Command::Occlude { model, data, index, mask_sizes, strides, mask_value, out, parallelism, format } => {
            thread_pool(parallelism)?;
            let stored = container::load(&model)?;
            let set = load_signal_set(&data, SignalFormat::Csv)?;
            if index >= set.len() {
                return Err(Error::Config(format!("index {index} out of range (n = {})", set.len())));
            }
            let signal = set.signals().row(index).to_vec();
            let report = experiment::occlude(&stored, &signal, &mask_sizes, &strides, mask_value)?;
            std::fs::create_dir_all(&out)?;
            if matches!(format, OutputFormat::Json | OutputFormat::Both) {
                std::fs::write(out.join("occlusion.json"), serde_json::to_string_pretty(&report)?)?;
            }
            for (i, m) in report.maps.iter().enumerate() {
                let stem = format!("map_mask{}_stride{}", m.config.mask_size, m.config.stride);
                if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
                    m.write_csv(&out.join(format!("{stem}.csv")))?;
                }
                std::fs::write(out.join(format!("{stem}.svg")), m.to_svg(Some(&signal)))?;
                let (s, e) = report.peak_regions[i];
                println!("mask {:>4} stride {:>4}: class {} peak [{s}, {e})", m.config.mask_size, m.config.stride, m.predicted_class);
            }
            println!("observation {index} (true class {}), outputs in {}", set.labels()[index], out.display());
        }
    }
    Ok(())
}

fn print_model(model: &StoredModel) {
    match model {
        StoredModel::Pipeline(p) => {
            println!("pipeline {}", p.spec);
            println!("  signal length {}, features {}, chosen k {}", p.signal_len(), p.extractor.num_features(), p.k);
            println!("  selected features {:?}", p.selected_features());
            println!("  classes {}", p.classifier.num_classes());
        }
        StoredModel::Mlp(m) => {
            println!("mlp, input {}, classes {}", m.input_dim, m.num_classes);
            println!("  block widths {:?}, parameters {}", m.widths(), m.num_parameters());
        }
    }
}

fn print_report(report: &ExperimentReport, top: usize) {
    println!(
        "{} | {} observations, d = {}, {} classes, {} groups",
        report.schema, report.dataset.observations, report.dataset.signal_len, report.dataset.classes, report.dataset.groups
    );
    for run in &report.runs {
        println!("[{}] {} folds, mean accuracy {:.4}", run.strategy, run.folds, run.mean_accuracy());
        for (i, r) in run.results.iter().take(top).enumerate() {
            println!("  {:>2}. {:<26} acc {:.4}  k {:?}{}", i + 1, r.pipeline, r.mean_accuracy, r.chosen_k, if r.failed { "  FAILED" } else { "" });
        }
        if let Some(m) = &run.mlp {
            println!("  MLP per-fold accuracy {:?}", m.per_fold_accuracy);
        }
    }
    if let Some(c) = &report.comparison {
        println!("kfold (k = {}) - logo: mean {:.4} - {:.4} = {:.4}", c.k, c.mean_kfold, c.mean_logo, c.mean_delta);
    }
    if let Some(o) = &report.occlusion {
        println!("occlusion of observation {} (class {}): {} maps", o.signal_index, o.true_class, o.maps.len());
    }
}
