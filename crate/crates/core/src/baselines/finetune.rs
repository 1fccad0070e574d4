//! Supervised pretraining over all training classes, and the baseline that
//! swaps in a fresh output layer and trains only that layer per episode.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::autodiff::{grad, ParamSet, ParamVars, Tape};
use crate::backbone::{
    classifier_features, embed_graph, episode_forward, init_output_layer, init_params,
    output_layer, BackboneConfig,
};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Episode, LabeledGraph};
use crate::tensor::Tensor;

use super::prototypical::label_accuracy;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    /// SGD steps, each on one random minibatch.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1000,
            batch: 32,
            lr: 1e-3,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 100,
            lr: 1e-3,
        }
    }
}

/// Trains backbone and classifier with cross-entropy over every class of
/// `train`. The output layer has one unit per training class.
pub fn pretrain(
    train: &Dataset,
    backbone: &BackboneConfig,
    cfg: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<ParamSet> {
    backbone.validate()?;
    let classes = train.classes();
    if classes.is_empty() {
        return Err(Error::Split("pretraining needs at least one class".into()));
    }
    let dense = |c: usize| classes.binary_search(&c).expect("class listed");
    let mut params = init_params(backbone, train.feature_dim(), classes.len(), rng);
    for step in 0..cfg.steps {
        let picked = sample_indices(rng, train.len(), cfg.batch.clamp(1, train.len()));
        let batch: Vec<LabeledGraph> = picked
            .iter()
            .map(|i| {
                let g = train.graph(i);
                LabeledGraph {
                    graph: g.clone(),
                    label: dense(g.class_id()),
                    position: i,
                }
            })
            .collect();
        let (_, g) = grad(&params, |tape, vars| {
            Ok(episode_forward(tape, &batch, vars, backbone)?.loss)
        })
        .map_err(|e| match e {
            Error::NonFinite { op, .. } => Error::Numeric {
                step,
                detail: format!("pretraining produced a non-finite value in {op}"),
            },
            other => other,
        })?;
        let decay = params.scaled(cfg.weight_decay);
        params.add_scaled(&g, -cfg.lr)?;
        params.add_scaled(&decay, -cfg.lr)?;
    }
    Ok(params)
}

/// Penultimate classifier activations of a frozen network, one row per graph.
pub fn frozen_features(
    params: &ParamSet,
    backbone: &BackboneConfig,
    graphs: &[LabeledGraph],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, params);
    let mut zs = Vec::with_capacity(graphs.len());
    for g in graphs {
        zs.push(embed_graph(&mut tape, &g.graph, &vars, backbone)?.z);
    }
    let z = tape.concat_rows(&zs)?;
    let h = classifier_features(&mut tape, z, &vars, backbone)?;
    Ok(tape.value(h).clone())
}

/// Fits a fresh `way`-wide output layer on fixed features by gradient
/// descent on the mean cross-entropy.
pub fn train_head(
    features: &Tensor,
    labels: &[usize],
    way: usize,
    cfg: &FinetuneConfig,
    rng: &mut impl Rng,
) -> Result<ParamSet> {
    let mut head = init_output_layer(features.cols(), way, rng);
    for _ in 0..cfg.steps {
        let (_, g) = grad(&head, |tape, vars| {
            let x = tape.constant(features.clone());
            let logits = output_layer(tape, x, vars)?;
            tape.softmax_cross_entropy(logits, labels)
        })?;
        head.add_scaled(&g, -cfg.lr)?;
    }
    Ok(head)
}

pub fn head_predict(head: &ParamSet, features: &Tensor) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, head);
    let x = tape.constant(features.clone());
    let logits = output_layer(&mut tape, x, &vars)?;
    let v = tape.value(logits);
    Ok((0..v.rows())
        .map(|r| crate::backbone::argmax(v.row(r)))
        .collect())
}

/// Query accuracy after training only a new output layer on the support set.
pub fn finetune_episode(
    pretrained: &ParamSet,
    backbone: &BackboneConfig,
    episode: &Episode,
    cfg: &FinetuneConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let support = frozen_features(pretrained, backbone, &episode.support)?;
    let query = frozen_features(pretrained, backbone, &episode.query)?;
    let head = train_head(&support, &episode.support_labels(), episode.way, cfg, rng)?;
    Ok(label_accuracy(
        &head_predict(&head, &query)?,
        &episode.query_labels(),
    ))
}
