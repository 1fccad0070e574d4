//! Inner-loop adaptation on support sets and the outer meta-update.

use crate::autodiff::{grad, GradRecord, MetaOrder, ParamSet, ParamVars, Tape, Var};
use crate::backbone::{episode_forward, BackboneConfig, EpisodeOutput};
use crate::error::{Error, Result};
use crate::graph::{Episode, LabeledGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub weight_decay: f64,
    pub order: MetaOrder,
    /// Episodes averaged per outer update.
    pub batch: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 1e-4,
            outer_lr: 1e-3,
            weight_decay: 1e-5,
            order: MetaOrder::Second,
            batch: 1,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("meta.inner_lr", self.inner_lr),
            ("meta.outer_lr", self.outer_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "meta.weight_decay must be non-negative".into(),
            ));
        }
        if self.batch == 0 {
            return Err(Error::Config("meta.batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step record of one adaptation. Losses and ANIs are measured before
/// step `t` is applied, query accuracies right after it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptationTrace {
    pub step_losses: Vec<f64>,
    pub step_anis: Vec<f64>,
    /// Empty unless a query set was supplied.
    pub step_query_accuracies: Vec<f64>,
    pub steps_taken: usize,
}

#[derive(Clone, Debug)]
pub struct MetaStep {
    pub params: ParamSet,
    pub traces: Vec<AdaptationTrace>,
    /// Mean over the batch, at the adapted parameters.
    pub query_loss: f64,
    pub query_accuracy: f64,
}

/// Loss and accuracy of a batch, values only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub ani: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MetaLearner {
    pub backbone: BackboneConfig,
    pub meta: MetaConfig,
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op, node } => Error::Numeric {
            step,
            detail: format!("non-finite value in {op} (node {node})"),
        },
        other => other,
    }
}

impl MetaLearner {
    pub fn new(backbone: BackboneConfig, meta: MetaConfig) -> Self {
        MetaLearner { backbone, meta }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        graphs: &[LabeledGraph],
    ) -> Result<EpisodeOutput> {
        episode_forward(tape, graphs, params, &self.backbone)
    }

    pub fn evaluate(&self, params: &ParamSet, graphs: &[LabeledGraph]) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars = ParamVars::constants(&mut tape, params);
        let out = self.forward(&mut tape, &vars, graphs)?;
        Ok(Evaluation {
            loss: tape.value(out.loss).item(),
            accuracy: out.accuracy,
            ani: out.ani.value(),
        })
    }

    /// `steps` gradient steps on the support set starting from a copy of
    /// `params`. With a query set, its accuracy is recorded after each step.
    pub fn adapt(
        &self,
        params: &ParamSet,
        support: &[LabeledGraph],
        query: Option<&[LabeledGraph]>,
        steps: usize,
    ) -> Result<(ParamSet, AdaptationTrace)> {
        let mut current = params.clone();
        let mut trace = AdaptationTrace::default();
        for t in 1..=steps {
            let mut ani = 0.0;
            let (loss, g) = grad(&current, |tape, vars| {
                let out = self.forward(tape, vars, support)?;
                ani = out.ani.value();
                Ok(out.loss)
            })
            .map_err(|e| at_step(t, e))?;
            current.add_scaled(&g, -self.meta.inner_lr)?;
            trace.step_losses.push(loss);
            trace.step_anis.push(ani);
            if let Some(q) = query {
                let e = self.evaluate(&current, q).map_err(|e| at_step(t, e))?;
                trace.step_query_accuracies.push(e.accuracy);
            }
            trace.steps_taken = t;
        }
        Ok((current, trace))
    }

    /// Query-loss gradient with respect to the pre-adaptation parameters,
    /// with the adaptation trace of the episode.
    pub fn meta_gradient(
        &self,
        params: &ParamSet,
        episode: &Episode,
        steps: usize,
    ) -> Result<(GradRecord, AdaptationTrace, Evaluation)> {
        let query_eval =
            |tape: &Tape, vars: &ParamVars| self.evaluate(&vars.values(tape), &episode.query);
        let record_step =
            |trace: &mut AdaptationTrace, out: &EpisodeOutput, tape: &Tape, t: usize| {
                trace.step_losses.push(tape.value(out.loss).item());
                trace.step_anis.push(out.ani.value());
                trace.steps_taken = t;
            };
        let query_out = |tape: &mut Tape, vars: &ParamVars| -> Result<(Var, Evaluation)> {
            let out = self.forward(tape, vars, &episode.query)?;
            let eval = Evaluation {
                loss: tape.value(out.loss).item(),
                accuracy: out.accuracy,
                ani: out.ani.value(),
            };
            Ok((out.loss, eval))
        };

        match self.meta.order {
            MetaOrder::Second => {
                let mut trace = AdaptationTrace::default();
                let mut tape = Tape::new();
                let start = ParamVars::register(&mut tape, params);
                let mut current = start.clone();
                for t in 1..=steps {
                    if t > 1 {
                        let e = query_eval(&tape, &current).map_err(|e| at_step(t - 1, e))?;
                        trace.step_query_accuracies.push(e.accuracy);
                    }
                    let out = self
                        .forward(&mut tape, &current, &episode.support)
                        .map_err(|e| at_step(t, e))?;
                    record_step(&mut trace, &out, &tape, t);
                    let g = tape
                        .backward(out.loss, &current.vars())
                        .map_err(|e| at_step(t, e))?;
                    current = current
                        .descend(&mut tape, &g, self.meta.inner_lr)
                        .map_err(|e| at_step(t, e))?;
                }
                let (loss, eval) = query_out(&mut tape, &current).map_err(|e| at_step(steps, e))?;
                if steps > 0 {
                    trace.step_query_accuracies.push(eval.accuracy);
                }
                let grads = tape.gradients(loss, &start.vars())?;
                Ok((start.grads_to_record(grads), trace, eval))
            }
            MetaOrder::First => {
                let (adapted, trace) =
                    self.adapt(params, &episode.support, Some(&episode.query), steps)?;
                let mut eval = None;
                let (_, record) = grad(&adapted, |tape, vars| {
                    let (loss, e) = query_out(tape, vars)?;
                    eval = Some(e);
                    Ok(loss)
                })
                .map_err(|e| at_step(steps, e))?;
                let eval = eval.expect("objective ran");
                Ok((record, trace, eval))
            }
        }
    }

    /// One outer SGD step with weight decay on a single episode.
    pub fn meta_update(
        &self,
        params: &ParamSet,
        episode: &Episode,
        steps: usize,
    ) -> Result<MetaStep> {
        self.meta_update_batch(params, std::slice::from_ref(episode), &[steps])
    }

    /// Outer SGD step on the mean meta-gradient of several episodes.
    pub fn meta_update_batch(
        &self,
        params: &ParamSet,
        episodes: &[Episode],
        steps: &[usize],
    ) -> Result<MetaStep> {
        if episodes.is_empty() || episodes.len() != steps.len() {
            return Err(Error::Config(format!(
                "{} episodes with {} step counts",
                episodes.len(),
                steps.len()
            )));
        }
        let mut total = params.zeros_like();
        let mut traces = Vec::with_capacity(episodes.len());
        let (mut loss, mut acc) = (0.0, 0.0);
        for (episode, &t) in episodes.iter().zip(steps) {
            let (g, trace, eval) = self.meta_gradient(params, episode, t)?;
            total.add_scaled(&g, 1.0)?;
            traces.push(trace);
            loss += eval.loss;
            acc += eval.accuracy;
        }
        let b = episodes.len() as f64;
        let lr = self.meta.outer_lr;
        let wd = self.meta.weight_decay;
        let mut next = params.clone();
        for (name, theta) in params.iter() {
            let g = total.get(name)?;
            let out = next.get_mut(name).expect("cloned");
            for ((o, &x), &gi) in out.data_mut().iter_mut().zip(theta.data()).zip(g.data()) {
                *o = x - lr * (gi / b + wd * x);
            }
        }
        if !next.is_finite() {
            return Err(Error::Numeric {
                step: 0,
                detail: "meta-update produced non-finite parameters".into(),
            });
        }
        Ok(MetaStep {
            params: next,
            traces,
            query_loss: loss / b,
            query_accuracy: acc / b,
        })
    }

    /// Adapts on the support set and returns query accuracy.
    pub fn test_episode(&self, params: &ParamSet, episode: &Episode, steps: usize) -> Result<f64> {
        let (adapted, _) = self.adapt(params, &episode.support, None, steps)?;
        Ok(self.evaluate(&adapted, &episode.query)?.accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_params;
    use crate::graph::{Dataset, EpisodeSampler, GraphData};
    use crate::synth::{synthetic_families, Family, SynthConfig};
    use crate::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn learner(inner_lr: f64, order: MetaOrder) -> MetaLearner {
        MetaLearner::new(
            BackboneConfig {
                layer_count: 2,
                hidden_dim: 6,
                ..BackboneConfig::default()
            },
            MetaConfig {
                inner_lr,
                outer_lr: 0.05,
                weight_decay: 0.0,
                order,
                batch: 1,
            },
        )
    }

    fn episode(seed: u64) -> (Dataset, Episode) {
        let ds = synthetic_families(&SynthConfig {
            families: vec![Family::Cycle, Family::Star, Family::Clique],
            per_family: 6,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let ep = EpisodeSampler::new(&ds, 3, 2, 2)
            .unwrap()
            .sample(&mut ChaCha8Rng::seed_from_u64(seed));
        (ds, ep)
    }

    #[test]
    fn adapt_leaves_input_untouched_and_zero_lr_is_identity() {
        let l = learner(0.0, MetaOrder::Second);
        let (_, ep) = episode(1);
        let params = init_params(&l.backbone, 4, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let snapshot = params.clone();
        let (adapted, trace) = l.adapt(&params, &ep.support, Some(&ep.query), 3).unwrap();
        assert!(params.bitwise_eq(&snapshot));
        assert!(adapted.bitwise_eq(&params));
        assert_eq!(trace.steps_taken, 3);
        assert_eq!(trace.step_query_accuracies.len(), 3);
        assert!(trace.step_losses.iter().all(|&v| v == trace.step_losses[0]));
    }

    #[test]
    fn first_and_second_order_traces_match() {
        let (_, ep) = episode(2);
        let a = learner(0.1, MetaOrder::Second);
        let b = learner(0.1, MetaOrder::First);
        let params = init_params(&a.backbone, 4, 3, &mut ChaCha8Rng::seed_from_u64(3));
        let (_, ta, ea) = a.meta_gradient(&params, &ep, 3).unwrap();
        let (_, tb, eb) = b.meta_gradient(&params, &ep, 3).unwrap();
        for (x, y) in ta.step_losses.iter().zip(&tb.step_losses) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(ta.step_query_accuracies, tb.step_query_accuracies);
        assert!((ea.loss - eb.loss).abs() < 1e-12);
        let (_, tc) = a.adapt(&params, &ep.support, Some(&ep.query), 3).unwrap();
        assert_eq!(tc.step_query_accuracies, ta.step_query_accuracies);
    }

    #[test]
    fn orders_agree_at_zero_steps_and_tiny_inner_lr() {
        let (_, ep) = episode(3);
        let params = init_params(
            &learner(0.0, MetaOrder::First).backbone,
            4,
            3,
            &mut ChaCha8Rng::seed_from_u64(5),
        );
        let (g2, _, _) = learner(0.3, MetaOrder::Second)
            .meta_gradient(&params, &ep, 0)
            .unwrap();
        let (g1, _, _) = learner(0.3, MetaOrder::First)
            .meta_gradient(&params, &ep, 0)
            .unwrap();
        assert!(g1.bitwise_eq(&g2));

        let (g2, _, _) = learner(1e-8, MetaOrder::Second)
            .meta_gradient(&params, &ep, 3)
            .unwrap();
        let (g1, _, _) = learner(1e-8, MetaOrder::First)
            .meta_gradient(&params, &ep, 3)
            .unwrap();
        let diff = g1.max_abs_diff(&g2);
        let scale = g2
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff / scale < 1e-4, "relative difference {}", diff / scale);
    }

    #[test]
    fn zero_outer_lr_and_decay_keep_params_bitwise() {
        let mut l = learner(0.1, MetaOrder::Second);
        l.meta.outer_lr = 0.0;
        let (_, ep) = episode(4);
        let params = init_params(&l.backbone, 4, 3, &mut ChaCha8Rng::seed_from_u64(6));
        let mut p = params.clone();
        for _ in 0..3 {
            p = l.meta_update(&p, &ep, 2).unwrap().params;
        }
        assert!(p.bitwise_eq(&params));
    }

    #[test]
    fn weight_decay_is_part_of_the_step() {
        let mut l = learner(0.1, MetaOrder::Second);
        l.meta.weight_decay = 0.5;
        let (_, ep) = episode(5);
        let params = init_params(&l.backbone, 4, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let (g, _, _) = l.meta_gradient(&params, &ep, 1).unwrap();
        let next = l.meta_update(&params, &ep, 1).unwrap().params;
        for (name, theta) in params.iter() {
            for i in 0..theta.len() {
                let x = theta.data()[i];
                let want = x - 0.05 * (g.get(name).unwrap().data()[i] + 0.5 * x);
                assert_eq!(next.get(name).unwrap().data()[i], want);
            }
        }
    }

    #[test]
    fn separable_two_way_episode_fits_support() {
        // classes differ by a constant offset on every feature
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let make = |offset: f64, label: usize, rng: &mut ChaCha8Rng| {
            let n = rng.random_range(4..8);
            let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            let feats = Tensor::new(
                n,
                3,
                (0..n * 3)
                    .map(|_| offset + 0.05 * rng.random::<f64>())
                    .collect(),
            )
            .unwrap();
            LabeledGraph {
                graph: Arc::new(GraphData::new(n, edges, feats, label).unwrap()),
                label,
                position: 0,
            }
        };
        let support: Vec<_> = (0..10)
            .map(|i| make(if i % 2 == 0 { -1.0 } else { 1.0 }, i % 2, &mut rng))
            .collect();
        let l = MetaLearner::new(
            BackboneConfig {
                layer_count: 1,
                hidden_dim: 8,
                ..BackboneConfig::default()
            },
            MetaConfig {
                inner_lr: 0.5,
                ..MetaConfig::default()
            },
        );
        let params = init_params(&l.backbone, 3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let (adapted, trace) = l.adapt(&params, &support, None, 5).unwrap();
        assert_eq!(l.evaluate(&adapted, &support).unwrap().accuracy, 1.0);
        assert!(trace.step_losses[4] < trace.step_losses[0]);
    }

    #[test]
    fn untrained_five_way_is_near_chance() {
        let ds = synthetic_families(&SynthConfig {
            families: Family::ALL[..5].to_vec(),
            per_family: 8,
            seed: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        let l = learner(1e-4, MetaOrder::Second);
        let sampler = EpisodeSampler::new(&ds, 5, 1, 3).unwrap();
        let mut total = 0.0;
        let runs = 40;
        for seed in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = init_params(&l.backbone, 4, 5, &mut rng);
            total += l
                .test_episode(&params, &sampler.sample(&mut rng), 1)
                .unwrap();
        }
        let mean = total / runs as f64;
        assert!((mean - 0.2).abs() < 0.12, "mean accuracy {mean}");
    }

    #[test]
    fn non_finite_loss_reports_step() {
        let l = learner(0.1, MetaOrder::First);
        let (_, ep) = episode(6);
        let mut params = init_params(&l.backbone, 4, 3, &mut ChaCha8Rng::seed_from_u64(1));
        params.get_mut("embed.conv0.weight").unwrap().data_mut()[0] = f64::INFINITY;
        match l.adapt(&params, &ep.support, None, 4) {
            Err(Error::Numeric { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
