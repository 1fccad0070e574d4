//! `graphmeta` command line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphmeta::autodiff::load_params;
use graphmeta::harness::{
    check_shapes, export_embeddings, load_dataset, run_baseline, run_checks, run_evaluate,
    run_train, Baseline, EvalSummary, ExperimentConfig, Snapshot,
};
use graphmeta::synth::synthetic_families;
use graphmeta::tu::write_tu_dataset;
use graphmeta::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "graphmeta",
    version,
    about = "Few-shot graph classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(self.overrides.iter().map(String::as_str))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BaselineKind {
    /// Graph kernel (`kernel.name`) with a prototypical classifier.
    Kernel,
    /// Pretrained backbone, new output layer trained per task.
    Finetune,
    /// Prototypes on pretrained graph embeddings.
    Proto,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train and write logs and checkpoints to `output.dir`.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test classes.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a comparison method on the test classes.
    Baseline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(value_enum)]
        kind: BaselineKind,
    },
    /// Write graph embeddings of a checkpoint as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of graphs; all by default.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the numerical self-tests.
    Check,
    /// Write the configured synthetic dataset in TU format.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "SYNTH")]
        name: String,
    },
}

fn report(label: &str, s: &EvalSummary) {
    println!(
        "{label}: accuracy {:.4} ± {:.4} (std {:.4}, {} tasks)",
        s.mean,
        s.ci95,
        s.std,
        s.accuracies.len()
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let r = run_train(&cfg)?;
            println!(
                "trained {} episodes; next step count {}",
                r.episodes, r.final_steps
            );
            if let Some(acc) = r.best_accuracy {
                println!("best validation accuracy {acc:.4}");
            }
            println!("best checkpoint {}", r.best_checkpoint.display());
        }
        Command::Evaluate { config, checkpoint } => {
            let cfg = config.load()?;
            let (summary, steps) = run_evaluate(&cfg, &checkpoint)?;
            report(&format!("as-maml ({steps} steps)"), &summary);
        }
        Command::Baseline { config, kind } => {
            let cfg = config.load()?;
            let which = match kind {
                BaselineKind::Kernel => Baseline::Kernel,
                BaselineKind::Finetune => Baseline::Finetune,
                BaselineKind::Proto => Baseline::Prototypes,
            };
            let summary = run_baseline(&cfg, which)?;
            report(&which.method_name(&cfg), &summary);
        }
        Command::ExportEmbeddings {
            config,
            checkpoint,
            out,
            samples,
            seed,
        } => {
            let cfg = config.load()?;
            let dataset = load_dataset(&cfg)?;
            let all = load_params(&checkpoint)?;
            check_shapes(&all, &cfg, dataset.feature_dim())?;
            let params = Snapshot::from_checkpoint(&cfg, &all)?.params;
            let n = export_embeddings(
                &params,
                &cfg.backbone,
                &dataset,
                samples.unwrap_or(dataset.len()),
                seed,
                &out,
            )?;
            println!("wrote {n} embeddings to {}", out.display());
        }
        Command::Check => {
            let results = run_checks();
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            if let Some(bad) = results.iter().find(|r| !r.passed) {
                return Err(Error::Numeric {
                    step: 0,
                    detail: format!("self-test '{}' failed", bad.name),
                });
            }
        }
        Command::Synth { config, out, name } => {
            let cfg = config.load()?;
            let graphmeta::harness::DataSource::Synthetic(s) = &cfg.data else {
                return Err(Error::Config("synth needs data.source = synthetic".into()));
            };
            let ds = synthetic_families(s)?;
            write_tu_dataset(&ds, &out, &name)?;
            println!("wrote {} graphs to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // usage errors are configuration errors (1), not data errors
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
