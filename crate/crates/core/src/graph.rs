//! Graph data model, class-disjoint splits and N-way-K-shot episode sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labeled, undirected graph with a dense node feature matrix.
///
/// Edges are stored once each as `(u, v)` with `u < v`, sorted, without
/// self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphData {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    class_id: usize,
}

impl GraphData {
    /// Duplicate edges (in either orientation) are collapsed; self-loops and
    /// out-of-range endpoints are rejected.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        class_id: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::shape("graph", "a graph needs at least one node"));
        }
        if features.rows() != node_count {
            return Err(Error::shape(
                "graph",
                format!("{} feature rows for {node_count} nodes", features.rows()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::shape("graph", "non-finite node features"));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::shape(
                    "graph",
                    format!("edge ({u}, {v}) outside {node_count} nodes"),
                ));
            }
            if u == v {
                return Err(Error::shape("graph", format!("self-loop on node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(GraphData {
            node_count,
            edges: set.into_iter().collect(),
            features,
            class_id,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn with_class(mut self, class_id: usize) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.node_count, &self.edges)
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<GraphData> {
        if perm.len() != self.node_count {
            return Err(Error::shape("permute", "permutation length"));
        }
        let mut rows = vec![Vec::new(); self.node_count];
        for (old, &new) in perm.iter().enumerate() {
            rows[new] = self.features.row(old).to_vec();
        }
        GraphData::new(
            self.node_count,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
            Tensor::from_rows(&rows)?,
            self.class_id,
        )
    }
}

/// Sorted neighbor lists of an undirected simple graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Adjacency { neighbors }
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    /// Subgraph induced by `kept`, reindexed so that `kept[i]` becomes node `i`.
    pub fn induced(&self, kept: &[usize]) -> Adjacency {
        let mut position = vec![usize::MAX; self.neighbors.len()];
        for (i, &v) in kept.iter().enumerate() {
            position[v] = i;
        }
        let neighbors = kept
            .iter()
            .map(|&v| {
                let mut list: Vec<usize> = self.neighbors[v]
                    .iter()
                    .map(|&u| position[u])
                    .filter(|&p| p != usize::MAX)
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        Adjacency { neighbors }
    }

    pub fn to_dense(&self) -> Tensor {
        let n = self.neighbors.len();
        let mut t = Tensor::zeros(n, n);
        for (u, list) in self.neighbors.iter().enumerate() {
            for &v in list {
                t.set(u, v, 1.0);
            }
        }
        t
    }
}

/// A collection of graphs sharing one feature dimension, indexed by class.
#[derive(Clone, Debug)]
pub struct Dataset {
    name: String,
    graphs: Vec<Arc<GraphData>>,
    class_index: BTreeMap<usize, Vec<usize>>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<GraphData>,
        feature_dim: usize,
    ) -> Result<Self> {
        Self::from_shared(
            name,
            graphs.into_iter().map(Arc::new).collect(),
            feature_dim,
        )
    }

    pub fn from_shared(
        name: impl Into<String>,
        graphs: Vec<Arc<GraphData>>,
        feature_dim: usize,
    ) -> Result<Self> {
        let mut class_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::shape(
                    "dataset",
                    format!(
                        "graph {i} has {} features, expected {feature_dim}",
                        g.feature_dim()
                    ),
                ));
            }
            class_index.entry(g.class_id()).or_default().push(i);
        }
        Ok(Dataset {
            name: name.into(),
            graphs,
            class_index,
            feature_dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Arc<GraphData>] {
        &self.graphs
    }

    pub fn graph(&self, i: usize) -> &Arc<GraphData> {
        &self.graphs[i]
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes(&self) -> Vec<usize> {
        self.class_index.keys().copied().collect()
    }

    pub fn class_count(&self) -> usize {
        self.class_index.len()
    }

    /// Positions of the graphs of `class`.
    pub fn class_members(&self, class: usize) -> &[usize] {
        self.class_index.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn mean_node_count(&self) -> f64 {
        let total: usize = self.graphs.iter().map(|g| g.node_count()).sum();
        total as f64 / self.graphs.len().max(1) as f64
    }

    pub fn mean_edge_count(&self) -> f64 {
        let total: usize = self.graphs.iter().map(|g| g.edge_count()).sum();
        total as f64 / self.graphs.len().max(1) as f64
    }

    fn subset(&self, suffix: &str, positions: impl Iterator<Item = usize>) -> Dataset {
        Dataset::from_shared(
            format!("{}/{suffix}", self.name),
            positions.map(|i| Arc::clone(&self.graphs[i])).collect(),
            self.feature_dim,
        )
        .expect("feature dims already consistent")
    }

    /// Graphs whose class is in `classes`, in original order.
    pub fn restrict(&self, suffix: &str, classes: &BTreeSet<usize>) -> Dataset {
        self.subset(
            suffix,
            (0..self.graphs.len()).filter(|&i| classes.contains(&self.graphs[i].class_id())),
        )
    }
}

/// Pairwise disjoint class sets for training, validation and test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: BTreeSet<usize>,
    pub val: BTreeSet<usize>,
    pub test: BTreeSet<usize>,
}

impl SplitSpec {
    pub fn new(
        train: impl IntoIterator<Item = usize>,
        val: impl IntoIterator<Item = usize>,
        test: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let spec = SplitSpec {
            train: train.into_iter().collect(),
            val: val.into_iter().collect(),
            test: test.into_iter().collect(),
        };
        let overlap = spec
            .train
            .intersection(&spec.val)
            .chain(spec.train.intersection(&spec.test))
            .chain(spec.val.intersection(&spec.test))
            .next()
            .copied();
        if let Some(c) = overlap {
            return Err(Error::Split(format!(
                "class {c} assigned to two partitions"
            )));
        }
        Ok(spec)
    }

    /// Seeded random assignment of `classes` into partitions of the given sizes.
    pub fn random(classes: &[usize], counts: [usize; 3], seed: u64) -> Result<Self> {
        let needed: usize = counts.iter().sum();
        if needed > classes.len() {
            return Err(Error::Split(format!(
                "split needs {needed} classes, dataset has {}",
                classes.len()
            )));
        }
        let mut shuffled = classes.to_vec();
        shuffled.sort_unstable();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, rest) = shuffled.split_at(counts[0]);
        let (val, rest) = rest.split_at(counts[1]);
        Self::new(
            train.iter().copied(),
            val.iter().copied(),
            rest[..counts[2]].iter().copied(),
        )
    }

    /// Parses the text split format:
    ///
    /// ```text
    /// train: 0 1 2 3
    /// val: 4
    /// test: 5 6
    /// ```
    ///
    /// or a single line `random: <train> <val> <test> [seed=<n>]` which is
    /// resolved against `classes`.
    pub fn from_text(text: &str, classes: &[usize]) -> Result<Self> {
        let mut parts: [Option<Vec<usize>>; 3] = [None, None, None];
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::Split(format!("line {}: expected 'key: values'", ln + 1)))?;
            let mut seed = 0;
            let mut numbers = Vec::new();
            for tok in rest.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                if let Some(s) = tok.strip_prefix("seed=") {
                    seed = s
                        .parse()
                        .map_err(|_| Error::Split(format!("line {}: bad seed", ln + 1)))?;
                } else {
                    numbers.push(tok.parse::<usize>().map_err(|_| {
                        Error::Split(format!("line {}: bad number '{tok}'", ln + 1))
                    })?);
                }
            }
            match key.trim() {
                "random" => {
                    let counts: [usize; 3] = numbers
                        .try_into()
                        .map_err(|_| Error::Split("random split needs three counts".to_string()))?;
                    return Self::random(classes, counts, seed);
                }
                "train" => parts[0] = Some(numbers),
                "val" => parts[1] = Some(numbers),
                "test" => parts[2] = Some(numbers),
                other => return Err(Error::Split(format!("unknown partition '{other}'"))),
            }
        }
        let [train, val, test] = parts.map(Option::unwrap_or_default);
        Self::new(train, val, test)
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Splits `dataset` into train, validation and test datasets by class.
pub fn split_by_class(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    for c in spec.train.iter().chain(&spec.val).chain(&spec.test) {
        if dataset.class_members(*c).is_empty() {
            return Err(Error::Split(format!(
                "class {c} does not exist in {}",
                dataset.name()
            )));
        }
    }
    Ok((
        dataset.restrict("train", &spec.train),
        dataset.restrict("val", &spec.val),
        dataset.restrict("test", &spec.test),
    ))
}

/// Moves a random `fraction` of each class's graphs into a validation set.
/// Used when a dataset has no validation classes.
pub fn carve_validation(train: &Dataset, fraction: f64, rng: &mut impl Rng) -> (Dataset, Dataset) {
    let mut held = BTreeSet::new();
    for class in train.classes() {
        let members = train.class_members(class);
        let take = ((members.len() as f64) * fraction).round() as usize;
        for i in sample_indices(rng, members.len(), take.min(members.len())) {
            held.insert(members[i]);
        }
    }
    let base = train.name().trim_end_matches("/train").to_string();
    let mut keep = train.subset("train", (0..train.len()).filter(|i| !held.contains(i)));
    let mut val = train.subset("val", held.iter().copied());
    keep.name = format!("{base}/train");
    val.name = format!("{base}/val");
    (keep, val)
}

/// A graph inside an episode with its episode-local label.
#[derive(Clone, Debug)]
pub struct LabeledGraph {
    pub graph: Arc<GraphData>,
    pub label: usize,
    /// Position of the graph in the dataset the episode was drawn from.
    pub position: usize,
}

/// One N-way-K-shot task.
#[derive(Clone, Debug)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub support: Vec<LabeledGraph>,
    pub query: Vec<LabeledGraph>,
    /// `class_map[label]` is the dataset class id behind episode label `label`.
    pub class_map: Vec<usize>,
}

impl Episode {
    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|g| g.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|g| g.label).collect()
    }
}

/// Draws episodes from the classes of a dataset that have enough graphs.
#[derive(Clone, Debug)]
pub struct EpisodeSampler<'a> {
    dataset: &'a Dataset,
    eligible: Vec<usize>,
    way: usize,
    shot: usize,
    query_per_class: usize,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(
        dataset: &'a Dataset,
        way: usize,
        shot: usize,
        query_per_class: usize,
    ) -> Result<Self> {
        if way == 0 || shot == 0 {
            return Err(Error::Sampling("way and shot must be positive".into()));
        }
        let needed = shot + query_per_class;
        let mut eligible = Vec::new();
        for class in dataset.classes() {
            let have = dataset.class_members(class).len();
            if have >= needed {
                eligible.push(class);
            } else {
                log::warn!(
                    "{}: class {class} has {have} graphs, fewer than {needed}; excluded from episodes",
                    dataset.name()
                );
            }
        }
        if eligible.len() < way {
            return Err(Error::Sampling(format!(
                "{}: {way}-way episodes need {way} classes with {needed} graphs each, found {}",
                dataset.name(),
                eligible.len()
            )));
        }
        Ok(EpisodeSampler {
            dataset,
            eligible,
            way,
            shot,
            query_per_class,
        })
    }

    pub fn eligible_classes(&self) -> &[usize] {
        &self.eligible
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Episode {
        let classes: Vec<usize> = sample_indices(rng, self.eligible.len(), self.way)
            .into_iter()
            .map(|i| self.eligible[i])
            .collect();
        let mut support = Vec::with_capacity(self.way * self.shot);
        let mut query = Vec::with_capacity(self.way * self.query_per_class);
        for (label, &class) in classes.iter().enumerate() {
            let members = self.dataset.class_members(class);
            let picked = sample_indices(rng, members.len(), self.shot + self.query_per_class);
            for (k, i) in picked.into_iter().enumerate() {
                let position = members[i];
                let item = LabeledGraph {
                    graph: Arc::clone(self.dataset.graph(position)),
                    label,
                    position,
                };
                if k < self.shot {
                    support.push(item);
                } else {
                    query.push(item);
                }
            }
        }
        Episode {
            way: self.way,
            shot: self.shot,
            query_per_class: self.query_per_class,
            support,
            query,
            class_map: classes,
        }
    }
}

pub fn sample_episode(
    dataset: &Dataset,
    way: usize,
    shot: usize,
    query_per_class: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    Ok(EpisodeSampler::new(dataset, way, shot, query_per_class)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(classes: &[usize], per_class: usize) -> Dataset {
        let graphs = classes
            .iter()
            .flat_map(|&c| {
                (0..per_class).map(move |i| {
                    GraphData::new(i + 1, (1..=i).map(|v| (0, v)), Tensor::zeros(i + 1, 1), c)
                        .unwrap()
                })
            })
            .collect();
        Dataset::new("toy", graphs, 1).unwrap()
    }

    #[test]
    fn graph_rejects_bad_edges() {
        let f = Tensor::zeros(2, 1);
        assert!(GraphData::new(2, [(0, 2)], f.clone(), 0).is_err());
        assert!(GraphData::new(2, [(1, 1)], f.clone(), 0).is_err());
        let g = GraphData::new(2, [(1, 0), (0, 1)], f, 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn induced_adjacency_keeps_edges_among_survivors() {
        let adj = Adjacency::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let sub = adj.induced(&[3, 0, 2]);
        assert_eq!(sub.edges(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn all_classes_to_train() {
        let ds = toy(&[0, 1, 2], 3);
        let spec = SplitSpec::new([0, 1, 2], [], []).unwrap();
        let (tr, va, te) = split_by_class(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (9, 0, 0));
    }

    #[test]
    fn four_class_split_two_one_one() {
        let ds = toy(&[0, 1, 2, 3], 2);
        let spec = SplitSpec::random(&ds.classes(), [2, 1, 1], 5).unwrap();
        let (tr, va, te) = split_by_class(&ds, &spec).unwrap();
        assert_eq!(
            (tr.class_count(), va.class_count(), te.class_count()),
            (2, 1, 1)
        );
    }

    #[test]
    fn split_rejects_overlap_and_unknown_classes() {
        assert!(SplitSpec::new([0, 1], [1], []).is_err());
        let ds = toy(&[0, 1], 2);
        let spec = SplitSpec::new([0], [7], []).unwrap();
        assert!(matches!(split_by_class(&ds, &spec), Err(Error::Split(_))));
    }

    #[test]
    fn split_text_formats() {
        let classes: Vec<usize> = (0..6).collect();
        let spec = SplitSpec::from_text("train: 0 1 2\nval: 3\n# comment\ntest: 4, 5\n", &classes)
            .unwrap();
        assert_eq!(spec.counts(), [3, 1, 2]);
        let r = SplitSpec::from_text("random: 3 1 2 seed=9", &classes).unwrap();
        assert_eq!(r, SplitSpec::random(&classes, [3, 1, 2], 9).unwrap());
        assert!(SplitSpec::from_text("random: 5 1 2", &classes).is_err());
    }

    #[test]
    fn one_way_one_shot() {
        let ds = toy(&[0, 1], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&ds, 1, 1, 1, &mut rng).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (1, 1));
        assert_eq!(ep.support[0].graph.class_id(), ep.query[0].graph.class_id());
    }

    #[test]
    fn scarce_classes_are_excluded() {
        let mut graphs: Vec<GraphData> = (0..5)
            .map(|_| GraphData::new(1, [], Tensor::zeros(1, 1), 0).unwrap())
            .collect();
        graphs.push(GraphData::new(1, [], Tensor::zeros(1, 1), 1).unwrap());
        let ds = Dataset::new("scarce", graphs, 1).unwrap();
        let sampler = EpisodeSampler::new(&ds, 1, 2, 1).unwrap();
        assert_eq!(sampler.eligible_classes(), &[0]);
        assert!(EpisodeSampler::new(&ds, 2, 2, 1).is_err());
    }

    #[test]
    fn carve_validation_is_a_partition() {
        let ds = toy(&[0, 1, 2], 10);
        let (tr, va) = carve_validation(&ds, 0.2, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(tr.len() + va.len(), 30);
        assert_eq!(va.len(), 6);
        assert_eq!(va.class_count(), 3);
    }

    proptest! {
        #[test]
        fn episodes_satisfy_invariants(way in 1usize..5, shot in 1usize..4, q in 0usize..3, seed: u64) {
            let ds = toy(&[0, 1, 2, 3, 4, 5], 7);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = sample_episode(&ds, way, shot, q, &mut rng).unwrap();
            prop_assert_eq!(ep.support.len(), way * shot);
            prop_assert_eq!(ep.query.len(), way * q);
            for label in 0..way {
                prop_assert_eq!(ep.support.iter().filter(|g| g.label == label).count(), shot);
            }
            for g in ep.support.iter().chain(&ep.query) {
                prop_assert_eq!(g.graph.class_id(), ep.class_map[g.label]);
            }
            let s: BTreeSet<usize> = ep.support.iter().map(|g| g.position).collect();
            prop_assert!(ep.query.iter().all(|g| !s.contains(&g.position)));
            let again = sample_episode(&ds, way, shot, q, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(
                again.support.iter().chain(&again.query).map(|g| g.position).collect::<Vec<_>>(),
                ep.support.iter().chain(&ep.query).map(|g| g.position).collect::<Vec<_>>()
            );
        }

        #[test]
        fn split_is_a_partition(seed: u64) {
            let ds = toy(&[0, 1, 2, 3, 4, 5, 6], 3);
            let spec = SplitSpec::random(&ds.classes(), [3, 2, 2], seed).unwrap();
            let (a, b, c) = split_by_class(&ds, &spec).unwrap();
            let mut all: Vec<*const GraphData> = a.graphs().iter().chain(b.graphs()).chain(c.graphs())
                .map(Arc::as_ptr).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), ds.len());
        }
    }
}
