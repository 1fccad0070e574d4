//! Whole commands with their file outputs, shared by the command line tool
//! and the end-to-end tests.
//!
//! A training run directory holds:
//!
//! ```text
//! config.txt     resolved configuration
//! run.csv        one row per meta-update
//! val.csv        one row per validation
//! initial.params parameters before the first update
//! best.params    best validated state (final state without validation)
//! final.params   state after the last update
//! last_good.params  written instead of final.params on numeric failure
//! timings.csv    wall-clock seconds per phase
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::ExperimentConfig;
use super::csv::{eval_log, run_log, run_row_fields, write_eval_rows, write_timings, CsvWriter};
use super::data::{prepare, Splits};
use super::evaluate::{
    evaluate_checkpoint, evaluate_embedding_prototypes, evaluate_finetune, evaluate_kernel,
    pretrain_backbone, EvalSummary,
};
use super::train::Trainer;
use crate::autodiff::{load_params, save_params, CheckpointFormat};
use crate::error::{Error, Result};

pub const VAL_COLUMNS: [&str; 5] = ["episode", "steps", "mean", "std", "ci95"];

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn save(dir: &Path, name: &str, params: &crate::autodiff::ParamSet) -> Result<PathBuf> {
    let path = dir.join(name);
    save_params(&path, params, CheckpointFormat::Text)?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub episodes: usize,
    pub best_accuracy: Option<f64>,
    pub best_checkpoint: PathBuf,
    pub final_steps: usize,
}

/// Trains with `cfg`, writing everything under `cfg.output_dir`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let started = Instant::now();
    let splits = prepare(cfg)?;
    run_train_on(cfg, &splits, started)
}

pub fn run_train_on(
    cfg: &ExperimentConfig,
    splits: &Splits,
    started: Instant,
) -> Result<TrainReport> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())
        .map_err(|e| Error::io(dir.join("config.txt"), e))?;
    let mut trainer = Trainer::new(cfg, splits)?;
    save(dir, "initial.params", &trainer.state().to_checkpoint())?;
    let mut runs = run_log(&dir.join("run.csv"))?;
    let mut vals = CsvWriter::create(&dir.join("val.csv"), "val", &VAL_COLUMNS)?;
    let setup = started.elapsed().as_secs_f64();
    let clock = Instant::now();
    let mut validation_secs = 0.0;
    let mut validation_count = 0;
    while !trainer.is_exhausted() {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(e) => {
                if e.exit_code() == 3 {
                    save(dir, "last_good.params", &trainer.state().to_checkpoint())?;
                }
                return Err(e);
            }
        };
        log::debug!(
            "episode {} steps {} query acc {:.3}",
            row.episode,
            row.steps,
            row.query_accuracy
        );
        runs.row(&run_row_fields(&row))?;
        if trainer.validation_due() {
            let t = Instant::now();
            if let Some(v) = trainer.validate()? {
                validation_count += 1;
                log::info!(
                    "episode {}: validation accuracy {:.4} ± {:.4}",
                    v.episode,
                    v.summary.mean,
                    v.summary.ci95
                );
                vals.row(&[
                    v.episode.to_string(),
                    v.steps.to_string(),
                    v.summary.mean.to_string(),
                    v.summary.std.to_string(),
                    v.summary.ci95.to_string(),
                ])?;
            }
            validation_secs += t.elapsed().as_secs_f64();
        }
    }
    let total = clock.elapsed().as_secs_f64();
    let best_checkpoint = save(dir, "best.params", &trainer.best().to_checkpoint())?;
    save(dir, "final.params", &trainer.state().to_checkpoint())?;
    write_timings(
        &dir.join("timings.csv"),
        &[
            ("setup", 1, setup),
            ("train", trainer.episode(), total - validation_secs),
            ("validation", validation_count, validation_secs),
        ],
    )?;
    Ok(TrainReport {
        episodes: trainer.episode(),
        best_accuracy: trainer.best_accuracy(),
        best_checkpoint,
        final_steps: trainer.state().steps(cfg),
    })
}

/// Evaluates a saved checkpoint on the test classes; appends the per-task
/// accuracies to `eval.csv` in the output directory.
pub fn run_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(EvalSummary, usize)> {
    let params = load_params(checkpoint)?;
    let splits = prepare(cfg)?;
    let (summary, steps) = evaluate_checkpoint(cfg, &splits, &params)?;
    ensure_dir(&cfg.output_dir)?;
    let mut w = eval_log(&cfg.output_dir.join("eval.csv"))?;
    write_eval_rows(&mut w, "as-maml", &summary.accuracies)?;
    Ok((summary, steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Kernel,
    Finetune,
    Prototypes,
}

impl Baseline {
    pub fn method_name(self, cfg: &ExperimentConfig) -> String {
        match self {
            Baseline::Kernel => format!("kernel-{}", cfg.kernel.name),
            Baseline::Finetune => "finetune".into(),
            Baseline::Prototypes => "gnn-proto".into(),
        }
    }
}

/// Runs one baseline on the test classes, writing `baseline_<method>.csv`.
pub fn run_baseline(cfg: &ExperimentConfig, which: Baseline) -> Result<EvalSummary> {
    let splits = prepare(cfg)?;
    let summary = match which {
        Baseline::Kernel => evaluate_kernel(cfg, &splits)?,
        Baseline::Finetune => evaluate_finetune(cfg, &splits, &pretrain_backbone(cfg, &splits)?)?,
        Baseline::Prototypes => {
            evaluate_embedding_prototypes(cfg, &splits, &pretrain_backbone(cfg, &splits)?)?
        }
    };
    ensure_dir(&cfg.output_dir)?;
    let method = which.method_name(cfg);
    let mut w = eval_log(&cfg.output_dir.join(format!("baseline_{method}.csv")))?;
    write_eval_rows(&mut w, &method, &summary.accuracies)?;
    Ok(summary)
}
