//! Test-time evaluation over seeded task sets, for the meta-learner and the
//! baselines alike. Task `i` is always drawn from the same rng stream, so
//! every method sees the same episodes for a given seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::data::Splits;
use super::train::Snapshot;
use crate::autodiff::ParamSet;
use crate::backbone::expected_shapes;
use crate::baselines::{
    embedding_episode, finetune_episode, kernel_episode, pretrain, Discretizer,
};
use crate::error::{Error, Result};
use crate::graph::{Episode, EpisodeSampler};
use crate::meta::MetaLearner;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single task.
    pub std: f64,
    pub ci95: f64,
    pub accuracies: Vec<f64>,
}

impl EvalSummary {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let m = accuracies.len();
        if m == 0 {
            return EvalSummary {
                mean: f64::NAN,
                std: 0.0,
                ci95: 0.0,
                accuracies,
            };
        }
        let mean = accuracies.iter().sum::<f64>() / m as f64;
        let std = if m > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        } else {
            0.0
        };
        EvalSummary {
            mean,
            std,
            ci95: 1.96 * std / (m as f64).sqrt(),
            accuracies,
        }
    }
}

/// Rng for task `index` under `seed`; sampling the episode comes first.
pub fn task_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `tasks` episodes and scores each with `method`, in parallel. The
/// result does not depend on the thread count.
pub fn evaluate_tasks<F>(
    sampler: &EpisodeSampler<'_>,
    tasks: usize,
    seed: u64,
    method: F,
) -> Result<EvalSummary>
where
    F: Fn(&Episode, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let accuracies = (0..tasks)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i);
            let episode = sampler.sample(&mut rng);
            method(&episode, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalSummary::from_accuracies(accuracies))
}

/// Rejects checkpoints whose backbone tensors do not match the configuration.
pub fn check_shapes(params: &ParamSet, cfg: &ExperimentConfig, input_dim: usize) -> Result<()> {
    for (name, [r, c]) in expected_shapes(&cfg.backbone, input_dim, cfg.way) {
        let t = params.get(&name).map_err(|_| {
            Error::Checkpoint(format!("missing parameter {name} (expected {r}x{c})"))
        })?;
        if t.shape() != [r, c] {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {}x{}, expected {r}x{c}",
                t.rows(),
                t.cols()
            )));
        }
    }
    Ok(())
}

fn test_sampler<'a>(cfg: &ExperimentConfig, splits: &'a Splits) -> Result<EpisodeSampler<'a>> {
    EpisodeSampler::new(&splits.test, cfg.way, cfg.shot, cfg.query)
}

/// Evaluates a trained checkpoint on the test classes. Returns the summary
/// and the number of adaptation steps used.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    splits: &Splits,
    checkpoint: &ParamSet,
) -> Result<(EvalSummary, usize)> {
    check_shapes(checkpoint, cfg, splits.test.feature_dim())?;
    let snapshot = Snapshot::from_checkpoint(cfg, checkpoint)?;
    let steps = cfg.eval_steps.unwrap_or_else(|| snapshot.steps(cfg));
    let learner = MetaLearner::new(cfg.backbone.clone(), cfg.meta.clone());
    let sampler = test_sampler(cfg, splits)?;
    let summary = evaluate_tasks(&sampler, cfg.eval_tasks, cfg.eval_seed, |ep, _| {
        learner.test_episode(&snapshot.params, ep, steps)
    })?;
    Ok((summary, steps))
}

/// Graph kernel with the prototypical classifier; `kernel.name` picks it.
pub fn evaluate_kernel(cfg: &ExperimentConfig, splits: &Splits) -> Result<EvalSummary> {
    let kernel = cfg.kernel.kernel()?;
    let disc = Discretizer::fit(
        splits.full.graphs().iter().map(|g| g.as_ref()),
        cfg.kernel.bins,
    );
    let sampler = test_sampler(cfg, splits)?;
    evaluate_tasks(&sampler, cfg.eval_tasks, cfg.eval_seed, |ep, rng| {
        Ok(kernel_episode(kernel, ep, &disc, rng)?.accuracy)
    })
}

/// Pretrains on the training classes once and returns the weights.
pub fn pretrain_backbone(cfg: &ExperimentConfig, splits: &Splits) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pretrain(&splits.train, &cfg.backbone, &cfg.pretrain, &mut rng)
}

/// Frozen pretrained backbone with a per-task output layer.
pub fn evaluate_finetune(
    cfg: &ExperimentConfig,
    splits: &Splits,
    pretrained: &ParamSet,
) -> Result<EvalSummary> {
    let sampler = test_sampler(cfg, splits)?;
    evaluate_tasks(&sampler, cfg.eval_tasks, cfg.eval_seed, |ep, rng| {
        finetune_episode(pretrained, &cfg.backbone, ep, &cfg.finetune, rng)
    })
}

/// Prototypical classification on pretrained graph embeddings.
pub fn evaluate_embedding_prototypes(
    cfg: &ExperimentConfig,
    splits: &Splits,
    pretrained: &ParamSet,
) -> Result<EvalSummary> {
    let sampler = test_sampler(cfg, splits)?;
    evaluate_tasks(&sampler, cfg.eval_tasks, cfg.eval_seed, |ep, _| {
        Ok(embedding_episode(pretrained, &cfg.backbone, ep)?.accuracy)
    })
}
