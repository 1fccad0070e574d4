//! Graph embedding backbone and MLP classifier.
//!
//! Each of the `L` layers applies a mean-aggregator convolution (the node's
//! own row is part of the mean), scores nodes with a normalized-adjacency
//! attention head, keeps the top `⌈ρ·n⌉` nodes gated by their scores, and
//! reads the survivors out as `relu(mean ‖ max)`. The graph embedding is the
//! sum of the per-layer readouts.

use rand::Rng;

use crate::ani::{ani_batch, AniValue, NodeActivations};
use crate::autodiff::{Activation, ParamSet, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphData, LabeledGraph};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub pool_ratio: f64,
    pub conv_activation: Activation,
    pub score_activation: Activation,
    pub readout_activation: Activation,
    /// Hidden widths of the classifier MLP; `None` means one layer of `2d`.
    pub classifier_hidden: Option<Vec<usize>>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            layer_count: 3,
            hidden_dim: 128,
            pool_ratio: 0.5,
            conv_activation: Activation::Sigmoid,
            score_activation: Activation::Tanh,
            readout_activation: Activation::Relu,
            classifier_hidden: None,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_count == 0 {
            return Err(Error::Config("backbone.layers must be at least 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("backbone.hidden must be at least 1".into()));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return Err(Error::Config(
                "backbone.pool_ratio must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn classifier_widths(&self) -> Vec<usize> {
        self.classifier_hidden
            .clone()
            .unwrap_or_else(|| vec![self.embedding_dim()])
    }

    /// Survivor count after pooling `n` nodes.
    pub fn survivors(&self, n: usize) -> usize {
        keep_count(self.pool_ratio, n)
    }
}

fn keep_count(ratio: f64, n: usize) -> usize {
    // the epsilon keeps e.g. 0.1 * 30 from rounding up to 4
    (((ratio * n as f64) - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

pub fn conv_weight(l: usize) -> String {
    format!("embed.conv{l}.weight")
}
pub fn conv_bias(l: usize) -> String {
    format!("embed.conv{l}.bias")
}
pub fn pool_attention(l: usize) -> String {
    format!("embed.pool{l}.attention")
}
pub fn classifier_weight(i: usize) -> String {
    format!("classifier.hidden{i}.weight")
}
pub fn classifier_bias(i: usize) -> String {
    format!("classifier.hidden{i}.bias")
}
pub const OUT_WEIGHT: &str = "classifier.out.weight";
pub const OUT_BIAS: &str = "classifier.out.bias";

/// Embedding parameters (`embed.*`) for `input_dim` node features.
pub fn init_embedding(cfg: &BackboneConfig, input_dim: usize, rng: &mut impl Rng) -> ParamSet {
    let d = cfg.hidden_dim;
    let mut p = ParamSet::new();
    for l in 0..cfg.layer_count {
        let fan_in = if l == 0 { input_dim } else { d };
        p.insert_glorot(conv_weight(l), fan_in, d, rng);
        p.insert(conv_bias(l), Tensor::zeros(1, d));
        p.insert_glorot(pool_attention(l), d, 1, rng);
    }
    p
}

/// Classifier parameters (`classifier.*`) with a `way`-wide output layer.
pub fn init_classifier(cfg: &BackboneConfig, way: usize, rng: &mut impl Rng) -> ParamSet {
    let mut p = ParamSet::new();
    let mut width = cfg.embedding_dim();
    for (i, &h) in cfg.classifier_widths().iter().enumerate() {
        p.insert_glorot(classifier_weight(i), width, h, rng);
        p.insert(classifier_bias(i), Tensor::zeros(1, h));
        width = h;
    }
    p.extend(&init_output_layer(width, way, rng));
    p
}

pub fn init_output_layer(width: usize, way: usize, rng: &mut impl Rng) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert_glorot(OUT_WEIGHT, width, way, rng);
    p.insert(OUT_BIAS, Tensor::zeros(1, way));
    p
}

pub fn init_params(
    cfg: &BackboneConfig,
    input_dim: usize,
    way: usize,
    rng: &mut impl Rng,
) -> ParamSet {
    let mut p = init_embedding(cfg, input_dim, rng);
    p.extend(&init_classifier(cfg, way, rng));
    p
}

/// Expected shape of every backbone and classifier parameter.
pub fn expected_shapes(
    cfg: &BackboneConfig,
    input_dim: usize,
    way: usize,
) -> Vec<(String, [usize; 2])> {
    let d = cfg.hidden_dim;
    let mut out = Vec::new();
    for l in 0..cfg.layer_count {
        out.push((conv_weight(l), [if l == 0 { input_dim } else { d }, d]));
        out.push((conv_bias(l), [1, d]));
        out.push((pool_attention(l), [d, 1]));
    }
    let mut width = cfg.embedding_dim();
    for (i, &h) in cfg.classifier_widths().iter().enumerate() {
        out.push((classifier_weight(i), [width, h]));
        out.push((classifier_bias(i), [1, h]));
        width = h;
    }
    out.push((OUT_WEIGHT.to_string(), [width, way]));
    out.push((OUT_BIAS.to_string(), [1, way]));
    out
}

/// Row-stochastic matrix averaging each node with its neighbors.
fn mean_aggregator(adj: &Adjacency) -> Tensor {
    let n = adj.node_count();
    let mut m = Tensor::zeros(n, n);
    for v in 0..n {
        let w = 1.0 / (adj.degree(v) + 1) as f64;
        m.set(v, v, w);
        for &u in adj.neighbors(v) {
            m.set(v, u, w);
        }
    }
    m
}

/// `D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A + I`.
fn normalized_adjacency(adj: &Adjacency) -> Tensor {
    let n = adj.node_count();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((adj.degree(v) + 1) as f64).sqrt())
        .collect();
    let mut m = Tensor::zeros(n, n);
    for v in 0..n {
        m.set(v, v, inv_sqrt[v] * inv_sqrt[v]);
        for &u in adj.neighbors(v) {
            m.set(v, u, inv_sqrt[v] * inv_sqrt[u]);
        }
    }
    m
}

/// One mean-aggregator convolution: `act(mean(h_v ∪ h_N(v)) · W + b)`.
pub fn sage_layer(
    tape: &mut Tape,
    adj: &Adjacency,
    h_prev: Var,
    weight: Var,
    bias: Var,
    act: Activation,
) -> Result<Var> {
    let [n, d_in] = tape.shape(h_prev);
    if n != adj.node_count() {
        return Err(Error::shape(
            "sage_layer",
            format!("{n} rows for {} nodes", adj.node_count()),
        ));
    }
    if tape.shape(weight)[0] != d_in {
        return Err(Error::shape(
            "sage_layer",
            format!("weight {:?} for input width {d_in}", tape.shape(weight)),
        ));
    }
    let m = tape.constant(mean_aggregator(adj));
    let mixed = tape.matmul(m, h_prev)?;
    let lin = tape.matmul(mixed, weight)?;
    let lin = tape.add_row_bias(lin, bias)?;
    tape.activation(lin, act)
}

#[derive(Clone, Debug)]
pub struct Pooled {
    /// Surviving node ids of the input graph, ascending.
    pub kept: Vec<usize>,
    pub adjacency: Adjacency,
    /// Kept rows of the input scaled by their scores.
    pub features: Var,
    /// Scores of all input nodes.
    pub scores: Vec<f64>,
}

/// Self-attention top-k pooling. Keeps `max(1, ⌈ratio·n⌉)` nodes with the
/// highest scores, ties going to the lower node id.
pub fn sag_pool(
    tape: &mut Tape,
    adj: &Adjacency,
    x: Var,
    attention: Var,
    ratio: f64,
    score_act: Activation,
) -> Result<Pooled> {
    let [n, d] = tape.shape(x);
    if n != adj.node_count() || n == 0 {
        return Err(Error::shape(
            "sag_pool",
            format!("{n} rows for {} nodes", adj.node_count()),
        ));
    }
    if tape.shape(attention) != [d, 1] {
        return Err(Error::shape(
            "sag_pool",
            format!("attention {:?} for width {d}", tape.shape(attention)),
        ));
    }
    let p = tape.constant(normalized_adjacency(adj));
    let proj = tape.matmul(x, attention)?;
    let raw = tape.matmul(p, proj)?;
    let scores = tape.activation(raw, score_act)?;
    let values = tape.value(scores).data().to_vec();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut kept = order[..keep_count(ratio, n)].to_vec();
    kept.sort_unstable();

    let rows = tape.gather_rows(x, &kept)?;
    let gate = tape.gather_rows(scores, &kept)?;
    let gate = tape.broadcast_cols(gate, d)?;
    let features = tape.mul(rows, gate)?;
    Ok(Pooled {
        adjacency: adj.induced(&kept),
        kept,
        features,
        scores: values,
    })
}

/// `act(rowmean(H) ‖ colmax(H))`, a `1 × 2d` row.
pub fn readout(tape: &mut Tape, h: Var, act: Activation) -> Result<Var> {
    let mean = tape.mean_rows(h)?;
    let max = tape.col_max(h)?;
    let cat = tape.concat_cols(&[mean, max])?;
    tape.activation(cat, act)
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Survivors as ids of the original graph.
    pub survivors: Vec<usize>,
    pub adjacency: Adjacency,
    pub hidden: Var,
    pub readout: Var,
}

#[derive(Clone, Debug)]
pub struct GraphEmbedding {
    /// `1 × 2d` sum of layer readouts.
    pub z: Var,
    pub layers: Vec<LayerTrace>,
}

impl GraphEmbedding {
    /// Final layer node embeddings on the final pooled topology.
    pub fn final_activations(&self, tape: &Tape) -> NodeActivations {
        let last = self.layers.last().expect("at least one layer");
        NodeActivations {
            adjacency: last.adjacency.clone(),
            hidden: tape.value(last.hidden).clone(),
        }
    }
}

pub fn embed_graph(
    tape: &mut Tape,
    graph: &GraphData,
    params: &ParamVars,
    cfg: &BackboneConfig,
) -> Result<GraphEmbedding> {
    let mut h = tape.constant(graph.features().clone());
    let mut adj = graph.adjacency();
    let mut ids: Vec<usize> = (0..graph.node_count()).collect();
    let mut z: Option<Var> = None;
    let mut layers = Vec::with_capacity(cfg.layer_count);
    for l in 0..cfg.layer_count {
        let conv = sage_layer(
            tape,
            &adj,
            h,
            params.get(&conv_weight(l))?,
            params.get(&conv_bias(l))?,
            cfg.conv_activation,
        )?;
        let pooled = sag_pool(
            tape,
            &adj,
            conv,
            params.get(&pool_attention(l))?,
            cfg.pool_ratio,
            cfg.score_activation,
        )?;
        ids = pooled.kept.iter().map(|&i| ids[i]).collect();
        h = pooled.features;
        adj = pooled.adjacency;
        let r = readout(tape, h, cfg.readout_activation)?;
        z = Some(match z {
            Some(acc) => tape.add(acc, r)?,
            None => r,
        });
        layers.push(LayerTrace {
            survivors: ids.clone(),
            adjacency: adj.clone(),
            hidden: h,
            readout: r,
        });
    }
    Ok(GraphEmbedding {
        z: z.expect("layer_count >= 1"),
        layers,
    })
}

/// Penultimate classifier features: the relu hidden layers applied to `z`.
pub fn classifier_features(
    tape: &mut Tape,
    z: Var,
    params: &ParamVars,
    cfg: &BackboneConfig,
) -> Result<Var> {
    let mut h = z;
    for i in 0..cfg.classifier_widths().len() {
        let lin = tape.matmul(h, params.get(&classifier_weight(i))?)?;
        let lin = tape.add_row_bias(lin, params.get(&classifier_bias(i))?)?;
        h = tape.relu(lin)?;
    }
    Ok(h)
}

/// Logits for a `B × 2d` stack of embeddings.
pub fn classify(tape: &mut Tape, z: Var, params: &ParamVars, cfg: &BackboneConfig) -> Result<Var> {
    let h = classifier_features(tape, z, params, cfg)?;
    output_layer(tape, h, params)
}

pub fn output_layer(tape: &mut Tape, h: Var, params: &ParamVars) -> Result<Var> {
    let w = params.get(OUT_WEIGHT)?;
    if tape.shape(w)[0] != tape.shape(h)[1] {
        return Err(Error::shape(
            "classify",
            format!(
                "output weight {:?} for features {:?}",
                tape.shape(w),
                tape.shape(h)
            ),
        ));
    }
    let lin = tape.matmul(h, w)?;
    tape.add_row_bias(lin, params.get(OUT_BIAS)?)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub struct EpisodeOutput {
    /// Mean cross-entropy, a `1 × 1` tape value.
    pub loss: Var,
    pub logits: Var,
    pub accuracy: f64,
    pub ani: AniValue,
    pub activations: Vec<NodeActivations>,
}

/// Embeds and classifies a labeled batch.
pub fn episode_forward(
    tape: &mut Tape,
    graphs: &[LabeledGraph],
    params: &ParamVars,
    cfg: &BackboneConfig,
) -> Result<EpisodeOutput> {
    if graphs.is_empty() {
        return Err(Error::shape("episode_forward", "empty batch"));
    }
    let mut zs = Vec::with_capacity(graphs.len());
    let mut activations = Vec::with_capacity(graphs.len());
    for g in graphs {
        let emb = embed_graph(tape, &g.graph, params, cfg)?;
        activations.push(emb.final_activations(tape));
        zs.push(emb.z);
    }
    let z = tape.concat_rows(&zs)?;
    let logits = classify(tape, z, params, cfg)?;
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let loss = tape.softmax_cross_entropy(logits, &labels)?;
    Ok(EpisodeOutput {
        loss,
        logits,
        accuracy: accuracy(tape.value(logits), &labels),
        ani: ani_batch(&activations)?,
        activations,
    })
}

/// Graph embeddings `z` (values only) for a list of graphs.
pub fn embed_values(
    graphs: &[&GraphData],
    params: &ParamSet,
    cfg: &BackboneConfig,
) -> Result<Vec<Tensor>> {
    graphs
        .iter()
        .map(|g| {
            let mut tape = Tape::new();
            let vars = ParamVars::constants(&mut tape, params);
            let emb = embed_graph(&mut tape, g, &vars, cfg)?;
            Ok(tape.value(emb.z).clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn isolated_node_identity_weights() {
        let mut tape = Tape::new();
        let adj = Adjacency::from_edges(1, &[]);
        let h = tape.constant(Tensor::zeros(1, 3));
        let w = tape.constant(Tensor::identity(3));
        let b = tape.constant(Tensor::zeros(1, 3));
        let out = sage_layer(&mut tape, &adj, h, w, b, Activation::Sigmoid).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn connected_pair_with_equal_features() {
        let mut tape = Tape::new();
        let adj = Adjacency::from_edges(2, &[(0, 1)]);
        let h = tape.constant(matrix(&[vec![0.4, -1.0], vec![0.4, -1.0]]));
        let w = tape.constant(matrix(&[vec![1.0, 2.0], vec![0.5, -0.3]]));
        let b = tape.constant(Tensor::zeros(1, 2));
        let out = sage_layer(&mut tape, &adj, h, w, b, Activation::Tanh).unwrap();
        let v = tape.value(out);
        assert_eq!(v.row(0), v.row(1));
        assert!((v.get(0, 0) - (0.4f64 - 0.5).tanh()).abs() < 1e-15);
    }

    #[test]
    fn three_node_path_matches_hand_oracle() {
        let feats = matrix(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, -2.0]]);
        let w = matrix(&[vec![0.2, -0.4, 1.0], vec![0.7, 0.1, -0.5]]);
        let b = matrix(&[vec![0.05, -0.1, 0.0]]);
        let neighborhoods = [vec![0, 1], vec![0, 1, 2], vec![1, 2]];
        let mut tape = Tape::new();
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)]);
        let h = tape.constant(feats.clone());
        let (wv, bv) = (tape.constant(w.clone()), tape.constant(b.clone()));
        let out = sage_layer(&mut tape, &adj, h, wv, bv, Activation::Sigmoid).unwrap();
        for (v, hood) in neighborhoods.iter().enumerate() {
            let mean: Vec<f64> = (0..2)
                .map(|c| hood.iter().map(|&u| feats.get(u, c)).sum::<f64>() / hood.len() as f64)
                .collect();
            for j in 0..3 {
                let lin = mean[0] * w.get(0, j) + mean[1] * w.get(1, j) + b.get(0, j);
                assert!((tape.value(out).get(v, j) - sigmoid(lin)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn readout_of_two_by_two() {
        let mut tape = Tape::new();
        let h = tape.constant(matrix(&[vec![1.0, -2.0], vec![3.0, 4.0]]));
        let r = readout(&mut tape, h, Activation::Relu).unwrap();
        assert_eq!(tape.value(r).data(), &[2.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn readout_of_single_row_is_relu_of_row_twice() {
        let mut tape = Tape::new();
        let h = tape.constant(matrix(&[vec![-1.0, 0.5]]));
        let r = readout(&mut tape, h, Activation::Relu).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn full_ratio_pooling_keeps_topology() {
        let mut tape = Tape::new();
        let adj = Adjacency::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let x = tape.constant(matrix(&[vec![1.0], vec![2.0], vec![-1.0], vec![0.5]]));
        let att = tape.constant(matrix(&[vec![0.3]]));
        let p = sag_pool(&mut tape, &adj, x, att, 1.0, Activation::Tanh).unwrap();
        assert_eq!(p.kept, vec![0, 1, 2, 3]);
        assert_eq!(p.adjacency, adj);
        for v in 0..4 {
            let expect = tape.value(x).get(v, 0) * p.scores[v];
            assert_eq!(tape.value(p.features).get(v, 0), expect);
        }
    }

    #[test]
    fn single_node_is_always_kept() {
        let mut tape = Tape::new();
        let adj = Adjacency::from_edges(1, &[]);
        let x = tape.constant(matrix(&[vec![1.0, 1.0]]));
        let att = tape.constant(matrix(&[vec![1.0], vec![-1.0]]));
        let p = sag_pool(&mut tape, &adj, x, att, 0.01, Activation::Tanh).unwrap();
        assert_eq!(p.kept, vec![0]);
    }

    #[test]
    fn star_pooling_matches_dense_computation() {
        // K_{1,3}: center 0, leaves 1..=3, identical features.
        let adj = Adjacency::from_edges(4, &[(0, 1), (0, 2), (0, 3)]);
        let feat = [0.8, -0.2];
        let theta = [0.5, 1.5];
        let xt = feat[0] * theta[0] + feat[1] * theta[1];
        // Ã = A + I, D̃ = diag(4, 2, 2, 2)
        let dt = [4.0f64, 2.0, 2.0, 2.0];
        let a_tilde = |i: usize, j: usize| -> f64 {
            if i == j || i == 0 || j == 0 {
                1.0
            } else {
                0.0
            }
        };
        let expect: Vec<f64> = (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| a_tilde(i, j) / (dt[i] * dt[j]).sqrt() * xt)
                    .sum::<f64>()
                    .tanh()
            })
            .collect();
        let mut tape = Tape::new();
        let x = tape.constant(matrix(&vec![feat.to_vec(); 4]));
        let att = tape.constant(matrix(&[vec![theta[0]], vec![theta[1]]]));
        let p = sag_pool(&mut tape, &adj, x, att, 0.5, Activation::Tanh).unwrap();
        for (s, e) in p.scores.iter().zip(&expect) {
            assert!((s - e).abs() < 1e-15);
        }
        assert_eq!(p.scores[1], p.scores[2]);
        assert_ne!(p.scores[0], p.scores[1]);
        // rank by score, then id
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| expect[b].partial_cmp(&expect[a]).unwrap().then(a.cmp(&b)));
        let mut want = order[..2].to_vec();
        want.sort();
        assert_eq!(p.kept, want);
    }

    fn small_cfg() -> BackboneConfig {
        BackboneConfig {
            layer_count: 2,
            hidden_dim: 4,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn embedding_has_length_two_d() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = init_params(&cfg, 3, 2, &mut rng);
        let g = GraphData::new(5, [(0, 1), (1, 2), (3, 4)], Tensor::filled(5, 3, 0.3), 0).unwrap();
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &params);
        let emb = embed_graph(&mut tape, &g, &vars, &cfg).unwrap();
        assert_eq!(tape.shape(emb.z), [1, 8]);
        assert_eq!(emb.layers[0].survivors.len(), 3);
        assert_eq!(emb.layers[1].survivors.len(), 2);
    }

    #[test]
    fn single_layer_full_ratio_on_single_node() {
        let cfg = BackboneConfig {
            layer_count: 1,
            hidden_dim: 3,
            pool_ratio: 1.0,
            ..BackboneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = init_params(&cfg, 2, 2, &mut rng);
        let g = GraphData::new(1, [], matrix(&[vec![0.5, -1.0]]), 0).unwrap();
        let mut tape = Tape::new();
        let vars = ParamVars::constants(&mut tape, &params);
        let emb = embed_graph(&mut tape, &g, &vars, &cfg).unwrap();
        let hidden = tape.value(emb.layers[0].hidden).clone();
        let mut expect = hidden.row(0).to_vec();
        expect.extend_from_slice(hidden.row(0));
        let expect: Vec<f64> = expect.into_iter().map(|v| v.max(0.0)).collect();
        assert_eq!(tape.value(emb.z).data(), expect.as_slice());
    }

    #[test]
    fn zero_classifier_gives_ln_n() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = init_params(&cfg, 2, 5, &mut rng);
        for name in [OUT_WEIGHT, OUT_BIAS] {
            let t = params.get(name).unwrap().clone();
            params.insert(name, Tensor::zeros(t.rows(), t.cols()));
        }
        let g =
            std::sync::Arc::new(GraphData::new(2, [(0, 1)], Tensor::filled(2, 2, 1.0), 0).unwrap());
        let batch = vec![LabeledGraph {
            graph: g,
            label: 3,
            position: 0,
        }];
        let mut tape = Tape::new();
        let vars = ParamVars::constants(&mut tape, &params);
        let out = episode_forward(&mut tape, &batch, &vars, &cfg).unwrap();
        assert!((tape.value(out.loss).item() - 5f64.ln()).abs() < 1e-12);
        // uniform logits: argmax tie goes to class 0
        assert_eq!(out.accuracy, 0.0);
    }

    #[test]
    fn classifier_width_mismatch_is_a_shape_error() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = init_params(&cfg, 2, 3, &mut rng);
        params.insert(OUT_WEIGHT, Tensor::zeros(5, 3));
        let mut tape = Tape::new();
        let vars = ParamVars::constants(&mut tape, &params);
        let z = tape.constant(Tensor::zeros(1, 8));
        assert!(matches!(
            classify(&mut tape, z, &vars, &cfg),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_cross_entropy_hand_oracle() {
        let logits = matrix(&[vec![0.2, -1.3, 2.0], vec![1.0, 0.0, -0.5]]);
        let labels = [2, 1];
        let mut want = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let norm: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[y].exp() / norm).ln();
        }
        want /= 2.0;
        let mut tape = Tape::new();
        let z = tape.constant(logits);
        let ce = tape.softmax_cross_entropy(z, &labels).unwrap();
        assert!((tape.value(ce).item() - want).abs() < 1e-12);
    }

    #[test]
    fn keep_count_rounding() {
        assert_eq!(keep_count(0.5, 5), 3);
        assert_eq!(keep_count(0.1, 30), 3);
        assert_eq!(keep_count(0.5, 1), 1);
        assert_eq!(keep_count(1.0, 7), 7);
    }
}
