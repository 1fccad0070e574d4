//! The episodic training loop: meta-updates, step control, periodic
//! validation with early stopping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, StepMode};
use super::data::Splits;
use super::evaluate::{evaluate_tasks, EvalSummary};
use crate::autodiff::ParamSet;
use crate::backbone::init_params;
use crate::controller::{checkpoint_steps, StepController};
use crate::error::{Error, Result};
use crate::graph::{Episode, EpisodeSampler};
use crate::meta::{AdaptationTrace, MetaLearner};

/// One training episode (averaged over the meta-batch when it exceeds one).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub episode: usize,
    pub steps: usize,
    pub support_loss_first: f64,
    pub support_loss_last: f64,
    pub ani_first: f64,
    pub ani_last: f64,
    pub query_loss: f64,
    pub query_accuracy: f64,
    /// Last stop probability; `None` with a fixed step count.
    pub p_final: Option<f64>,
    pub q_total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub episode: usize,
    pub steps: usize,
    pub summary: EvalSummary,
}

/// Trainable state: meta parameters and, in adaptive mode, the controller.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub params: ParamSet,
    pub controller: Option<StepController>,
}

impl Snapshot {
    /// Steps to use for adaptation with this state.
    pub fn steps(&self, cfg: &ExperimentConfig) -> usize {
        match (&cfg.steps, &self.controller) {
            (StepMode::Fixed(t), _) => *t,
            (StepMode::Adaptive, Some(c)) => c.next_steps(),
            (StepMode::Adaptive, None) => cfg.controller.initial_steps(),
        }
    }

    /// Everything needed to resume evaluation, as one parameter set.
    pub fn to_checkpoint(&self) -> ParamSet {
        let mut all = self.params.clone();
        if let Some(c) = &self.controller {
            all.extend(&c.to_params());
        }
        all
    }

    pub fn from_checkpoint(cfg: &ExperimentConfig, all: &ParamSet) -> Result<Self> {
        let params: ParamSet = all
            .iter()
            .filter(|(k, _)| k.starts_with("embed.") || k.starts_with("classifier."))
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let controller = if matches!(cfg.steps, StepMode::Adaptive)
            && all.contains(crate::controller::STOP_BIAS)
        {
            Some(StepController::from_params(cfg.controller.clone(), all)?)
        } else {
            None
        };
        Ok(Snapshot { params, controller })
    }
}

/// Steps recorded in a checkpoint by an adaptive run, if any.
pub fn checkpoint_step_count(all: &ParamSet) -> Option<usize> {
    checkpoint_steps(all)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for v in values {
        total += v;
        n += 1;
    }
    total / n.max(1) as f64
}

pub struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    learner: MetaLearner,
    state: Snapshot,
    train: EpisodeSampler<'a>,
    val: Option<EpisodeSampler<'a>>,
    rng: ChaCha8Rng,
    episode: usize,
    best: Option<(f64, Snapshot)>,
    stale: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, splits: &'a Splits) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = init_params(&cfg.backbone, splits.train.feature_dim(), cfg.way, &mut rng);
        let controller = match cfg.steps {
            StepMode::Adaptive => Some(StepController::new(cfg.controller.clone(), &mut rng)?),
            StepMode::Fixed(_) => None,
        };
        let train = EpisodeSampler::new(&splits.train, cfg.way, cfg.shot, cfg.query)?;
        let val = if cfg.val_tasks > 0 && cfg.val_interval > 0 {
            match EpisodeSampler::new(&splits.val, cfg.way, cfg.shot, cfg.query) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("validation disabled: {e}");
                    None
                }
            }
        } else {
            None
        };
        Ok(Trainer {
            cfg,
            learner: MetaLearner::new(cfg.backbone.clone(), cfg.meta.clone()),
            state: Snapshot { params, controller },
            train,
            val,
            rng,
            episode: 0,
            best: None,
            stale: 0,
        })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn state(&self) -> &Snapshot {
        &self.state
    }

    /// Best validated state, or the current one when nothing was validated.
    pub fn best(&self) -> &Snapshot {
        self.best.as_ref().map_or(&self.state, |(_, s)| s)
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.best.as_ref().map(|(a, _)| *a)
    }

    pub fn is_exhausted(&self) -> bool {
        self.episode >= self.cfg.episodes
            || (self.val.is_some() && self.stale >= self.cfg.patience.max(1))
    }

    /// One outer update. Errors carry the episode index.
    pub fn step(&mut self) -> Result<RunRow> {
        let index = self.episode;
        let steps = self.state.steps(self.cfg);
        let episodes: Vec<Episode> = (0..self.cfg.meta.batch)
            .map(|_| self.train.sample(&mut self.rng))
            .collect();
        let counts = vec![steps; episodes.len()];
        let update = self
            .learner
            .meta_update_batch(&self.state.params, &episodes, &counts)
            .map_err(|e| at_episode(index, e))?;
        let mut p_final = None;
        let mut q_total = None;
        if let Some(controller) = &mut self.state.controller {
            let (mut qs, mut p) = (0.0, 0.0);
            for trace in &update.traces {
                let out = controller
                    .observe(trace)
                    .map_err(|e| at_episode(index, e))?;
                qs += out.rewards.total();
                p = out.p_final;
            }
            p_final = Some(p);
            q_total = Some(qs / update.traces.len() as f64);
        }
        self.state.params = update.params;
        self.episode += 1;
        let traces = &update.traces;
        let first = |f: fn(&AdaptationTrace) -> &Vec<f64>| {
            mean(
                traces
                    .iter()
                    .map(|t| f(t).first().copied().unwrap_or(f64::NAN)),
            )
        };
        let last = |f: fn(&AdaptationTrace) -> &Vec<f64>| {
            mean(
                traces
                    .iter()
                    .map(|t| f(t).last().copied().unwrap_or(f64::NAN)),
            )
        };
        Ok(RunRow {
            episode: index,
            steps,
            support_loss_first: first(|t| &t.step_losses),
            support_loss_last: last(|t| &t.step_losses),
            ani_first: first(|t| &t.step_anis),
            ani_last: last(|t| &t.step_anis),
            query_loss: update.query_loss,
            query_accuracy: update.query_accuracy,
            p_final,
            q_total,
        })
    }

    /// Whether a validation is due after the latest step.
    pub fn validation_due(&self) -> bool {
        self.val.is_some() && self.episode > 0 && self.episode.is_multiple_of(self.cfg.val_interval)
    }

    /// Evaluates the current state on a fixed set of validation tasks and
    /// keeps it if it is the best so far.
    pub fn validate(&mut self) -> Result<Option<Validation>> {
        let Some(sampler) = &self.val else {
            return Ok(None);
        };
        let steps = self.state.steps(self.cfg);
        let params = &self.state.params;
        let learner = &self.learner;
        // same tasks at every validation
        let seed = self.cfg.seed ^ 0x5e_ed0f_7a5c;
        let summary = evaluate_tasks(sampler, self.cfg.val_tasks, seed, |ep, _| {
            learner.test_episode(params, ep, steps)
        })?;
        if self.best.as_ref().is_none_or(|(a, _)| summary.mean > *a) {
            self.best = Some((summary.mean, self.state.clone()));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(Some(Validation {
            episode: self.episode,
            steps,
            summary,
        }))
    }
}

fn at_episode(index: usize, e: Error) -> Error {
    match e {
        Error::Numeric { step, detail } => Error::Numeric {
            step,
            detail: format!("episode {index}: {detail}"),
        },
        Error::NonFinite { op, node } => Error::Numeric {
            step: 0,
            detail: format!("episode {index}: non-finite value in {op} (node {node})"),
        },
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<RunRow>,
    pub validations: Vec<Validation>,
    pub best: Snapshot,
    pub last: Snapshot,
    pub best_accuracy: Option<f64>,
}

/// Runs the whole budget in memory. `on_row` sees each row as it is produced.
pub fn train(
    cfg: &ExperimentConfig,
    splits: &Splits,
    mut on_row: impl FnMut(&RunRow),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, splits)?;
    let mut rows = Vec::new();
    let mut validations = Vec::new();
    while !trainer.is_exhausted() {
        let row = trainer.step()?;
        on_row(&row);
        rows.push(row);
        if trainer.validation_due() {
            validations.extend(trainer.validate()?);
        }
    }
    Ok(TrainOutcome {
        rows,
        validations,
        best: trainer.best().clone(),
        last: trainer.state().clone(),
        best_accuracy: trainer.best_accuracy(),
    })
}
