//! Normalized graph kernels on discretized node labels.
//!
//! Every kernel is an explicit sparse feature map followed by cosine
//! normalization, so `k(g, g) = 1` and `k(a, b) = k(b, a)` exactly.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, VecDeque};
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphData};
use crate::tensor::Tensor;

/// Sparse histogram keyed by feature id.
pub type Histogram = BTreeMap<u64, f64>;

fn hash_of(value: &impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

/// Maps continuous node features to discrete labels by cutting every
/// dimension into equal-width bins over a fitted range.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretizer {
    mins: Vec<f64>,
    maxs: Vec<f64>,
    bins: usize,
}

impl Discretizer {
    pub const DEFAULT_BINS: usize = 8;

    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a GraphData>, bins: usize) -> Self {
        let mut mins: Vec<f64> = Vec::new();
        let mut maxs: Vec<f64> = Vec::new();
        for g in graphs {
            let f = g.features();
            if mins.is_empty() {
                mins = vec![f64::INFINITY; f.cols()];
                maxs = vec![f64::NEG_INFINITY; f.cols()];
            }
            for r in 0..f.rows() {
                for (c, &v) in f.row(r).iter().enumerate() {
                    mins[c] = mins[c].min(v);
                    maxs[c] = maxs[c].max(v);
                }
            }
        }
        Discretizer {
            mins,
            maxs,
            bins: bins.max(1),
        }
    }

    pub fn bin(&self, dim: usize, v: f64) -> usize {
        let (lo, hi) = (self.mins[dim], self.maxs[dim]);
        if !(hi > lo) {
            return 0;
        }
        let b = ((v - lo) / (hi - lo) * self.bins as f64).floor();
        (b.max(0.0) as usize).min(self.bins - 1)
    }

    /// One label per node: a hash of the node's bin tuple.
    pub fn labels(&self, graph: &GraphData) -> Vec<u64> {
        let f = graph.features();
        (0..f.rows())
            .map(|r| {
                let bins: Vec<usize> = f
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| {
                        if c < self.mins.len() {
                            self.bin(c, v)
                        } else {
                            0
                        }
                    })
                    .collect();
                hash_of(&bins)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// Subtree label histograms over `iterations` refinement rounds.
    WeisfeilerLehman { iterations: usize },
    /// Histogram of shortest-path lengths, longer paths counted at `max_length`.
    ShortestPath { max_length: usize },
    /// Distribution of induced 3-node subgraphs by edge count.
    Graphlet { samples: usize },
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::WeisfeilerLehman { .. } => "wl",
            Kernel::ShortestPath { .. } => "sp",
            Kernel::Graphlet { .. } => "graphlet",
        }
    }

    pub fn parse(
        name: &str,
        wl_iterations: usize,
        sp_max_length: usize,
        graphlet_samples: usize,
    ) -> Result<Self> {
        match name {
            "wl" => Ok(Kernel::WeisfeilerLehman {
                iterations: wl_iterations,
            }),
            "sp" => Ok(Kernel::ShortestPath {
                max_length: sp_max_length,
            }),
            "graphlet" => Ok(Kernel::Graphlet {
                samples: graphlet_samples,
            }),
            other => Err(Error::Config(format!(
                "unknown kernel '{other}' (wl, sp, graphlet)"
            ))),
        }
    }

    pub fn features(&self, graph: &GraphData, disc: &Discretizer, rng: &mut impl Rng) -> Histogram {
        match *self {
            Kernel::WeisfeilerLehman { iterations } => {
                wl_features(&graph.adjacency(), &disc.labels(graph), iterations)
            }
            Kernel::ShortestPath { max_length } => sp_features(&graph.adjacency(), max_length),
            Kernel::Graphlet { samples } => graphlet_counts(&graph.adjacency(), samples, rng)
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0.0)
                .map(|(k, c)| (k as u64, c))
                .collect(),
        }
    }
}

/// Label histograms of rounds `0..=iterations`; round `i + 1` relabels each
/// node by its round-`i` label and the sorted labels of its neighbors.
pub fn wl_features(adj: &Adjacency, labels: &[u64], iterations: usize) -> Histogram {
    let mut hist = Histogram::new();
    let mut current = labels.to_vec();
    for round in 0..=iterations {
        for &l in &current {
            *hist.entry(hash_of(&(round, l))).or_insert(0.0) += 1.0;
        }
        if round == iterations {
            break;
        }
        current = (0..adj.node_count())
            .map(|v| {
                let mut around: Vec<u64> = adj.neighbors(v).iter().map(|&u| current[u]).collect();
                around.sort_unstable();
                hash_of(&(current[v], around))
            })
            .collect();
    }
    hist
}

/// BFS distances from `source`; unreachable nodes are `None`.
pub fn bfs_distances(adj: &Adjacency, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.node_count()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes are reached");
        for &u in adj.neighbors(v) {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Counts of unordered connected node pairs by path length.
pub fn sp_features(adj: &Adjacency, max_length: usize) -> Histogram {
    let mut hist = Histogram::new();
    for s in 0..adj.node_count() {
        for d in bfs_distances(adj, s).into_iter().skip(s + 1).flatten() {
            *hist.entry(d.min(max_length.max(1)) as u64).or_insert(0.0) += 1.0;
        }
    }
    hist
}

pub const EXACT_TRIPLE_LIMIT: usize = 20_000;

fn triple_type(adj: &Adjacency, a: usize, b: usize, c: usize) -> usize {
    let has = |x: usize, y: usize| adj.neighbors(x).binary_search(&y).is_ok();
    has(a, b) as usize + has(a, c) as usize + has(b, c) as usize
}

fn triple_count(n: usize) -> usize {
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// Exact counts of induced 3-node subgraphs with 0, 1, 2 and 3 edges.
pub fn graphlet_counts_exact(adj: &Adjacency) -> [f64; 4] {
    let n = adj.node_count();
    let mut counts = [0.0; 4];
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                counts[triple_type(adj, a, b, c)] += 1.0;
            }
        }
    }
    counts
}

/// Counts over `samples` uniformly drawn node triples.
pub fn graphlet_counts_sampled(adj: &Adjacency, samples: usize, rng: &mut impl Rng) -> [f64; 4] {
    let n = adj.node_count();
    let mut counts = [0.0; 4];
    if n < 3 {
        return counts;
    }
    for _ in 0..samples {
        let picked = rand::seq::index::sample(rng, n, 3);
        counts[triple_type(adj, picked.index(0), picked.index(1), picked.index(2))] += 1.0;
    }
    counts
}

/// Exact counts when there are at most [`EXACT_TRIPLE_LIMIT`] triples,
/// sampled counts otherwise.
pub fn graphlet_counts(adj: &Adjacency, samples: usize, rng: &mut impl Rng) -> [f64; 4] {
    if triple_count(adj.node_count()) <= EXACT_TRIPLE_LIMIT {
        graphlet_counts_exact(adj)
    } else {
        graphlet_counts_sampled(adj, samples.max(1), rng)
    }
}

/// `⟨a, b⟩ / √(⟨a, a⟩⟨b, b⟩)`; two empty histograms are identical (1), one
/// empty histogram is orthogonal to everything else (0).
pub fn cosine(a: &Histogram, b: &Histogram) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    dot(a, b) / (aa * bb).sqrt()
}

fn dot(a: &Histogram, b: &Histogram) -> f64 {
    // merge in key order so that (a, b) and (b, a) sum identical terms
    let mut total = 0.0;
    let (mut ia, mut ib) = (a.iter().peekable(), b.iter().peekable());
    while let (Some(&(ka, va)), Some(&(kb, vb))) = (ia.peek(), ib.peek()) {
        match ka.cmp(kb) {
            std::cmp::Ordering::Less => {
                ia.next();
            }
            std::cmp::Ordering::Greater => {
                ib.next();
            }
            std::cmp::Ordering::Equal => {
                total += va * vb;
                ia.next();
                ib.next();
            }
        }
    }
    total
}

/// Normalized similarity of two graphs.
pub fn kernel_value(
    kernel: Kernel,
    a: &GraphData,
    b: &GraphData,
    disc: &Discretizer,
    rng: &mut impl Rng,
) -> f64 {
    cosine(
        &kernel.features(a, disc, rng),
        &kernel.features(b, disc, rng),
    )
}

pub fn wl_kernel(a: &GraphData, b: &GraphData, iterations: usize, disc: &Discretizer) -> f64 {
    let fa = wl_features(&a.adjacency(), &disc.labels(a), iterations);
    let fb = wl_features(&b.adjacency(), &disc.labels(b), iterations);
    cosine(&fa, &fb)
}

pub fn sp_kernel(a: &GraphData, b: &GraphData, max_length: usize) -> f64 {
    cosine(
        &sp_features(&a.adjacency(), max_length),
        &sp_features(&b.adjacency(), max_length),
    )
}

pub fn graphlet_kernel(a: &GraphData, b: &GraphData, samples: usize, rng: &mut impl Rng) -> f64 {
    let k = Kernel::Graphlet { samples };
    let disc = Discretizer::fit(std::iter::empty(), 1);
    kernel_value(k, a, b, &disc, rng)
}

/// Similarities between two lists of feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub values: Tensor,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

impl KernelMatrix {
    pub fn between(rows: &[(usize, Histogram)], cols: &[(usize, Histogram)]) -> Self {
        let mut values = Tensor::zeros(rows.len(), cols.len());
        for (i, (_, a)) in rows.iter().enumerate() {
            for (j, (_, b)) in cols.iter().enumerate() {
                values.set(i, j, cosine(a, b));
            }
        }
        KernelMatrix {
            values,
            row_ids: rows.iter().map(|(id, _)| *id).collect(),
            col_ids: cols.iter().map(|(id, _)| *id).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> GraphData {
        GraphData::new(n, edges.iter().copied(), Tensor::filled(n, 1, 1.0), 0).unwrap()
    }

    fn disc() -> Discretizer {
        Discretizer::fit([&graph(1, &[])], 8)
    }

    #[test]
    fn wl_triangle_vs_path_hand_oracle() {
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let path = graph(3, &[(0, 1), (1, 2)]);
        // round 0: both {L:3}. round 1: triangle {(L,LL):3}, path {(L,L):2, (L,LL):1}
        // raw: k(t,t)=9+9, k(p,p)=9+4+1, k(t,p)=9+3
        let want = 12.0 / (18.0f64 * 14.0).sqrt();
        assert!((wl_kernel(&tri, &path, 1, &disc()) - want).abs() < 1e-12);
        assert_eq!(wl_kernel(&tri, &path, 0, &disc()), 1.0);
    }

    #[test]
    fn sp_path_vs_triangle_hand_oracle() {
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let path = graph(3, &[(0, 1), (1, 2)]);
        // triangle {1:3}, path {1:2, 2:1}
        let want = 6.0 / (9.0f64 * 5.0).sqrt();
        assert!((sp_kernel(&tri, &path, 10) - want).abs() < 1e-12);
        assert_eq!(sp_kernel(&tri, &tri, 10), 1.0);
    }

    #[test]
    fn sp_empty_conventions() {
        let single = graph(1, &[]);
        let edge = graph(2, &[(0, 1)]);
        assert_eq!(sp_kernel(&single, &single, 10), 1.0);
        assert_eq!(sp_kernel(&single, &edge, 10), 0.0);
        assert_eq!(sp_kernel(&edge, &single, 10), 0.0);
    }

    #[test]
    fn sp_caps_long_paths() {
        let p = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let h = sp_features(&p.adjacency(), 3);
        assert_eq!(h.get(&3), Some(&6.0));
        assert_eq!(h.values().sum::<f64>(), 15.0);
    }

    #[test]
    fn graphlet_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let empty = graph(3, &[]);
        assert_eq!(graphlet_counts_exact(&k3.adjacency()), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(graphlet_kernel(&k3, &k3, 100, &mut rng), 1.0);
        assert_eq!(graphlet_kernel(&k3, &empty, 100, &mut rng), 0.0);
    }

    #[test]
    fn sampled_graphlets_track_exact_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = 8;
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .filter(|_| rng.random_bool(0.4))
                .collect();
            let adj = Adjacency::from_edges(n, &edges);
            let exact = graphlet_counts_exact(&adj);
            let sampled = graphlet_counts_sampled(&adj, 10_000, &mut rng);
            let (te, ts) = (exact.iter().sum::<f64>(), sampled.iter().sum::<f64>());
            let tv: f64 = exact
                .iter()
                .zip(&sampled)
                .map(|(e, s)| (e / te - s / ts).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.05, "total variation {tv}");
        }
    }

    #[test]
    fn discretizer_bins() {
        let g = GraphData::new(
            3,
            [],
            Tensor::from_rows(&[vec![0.0], vec![0.5], vec![1.0]]).unwrap(),
            0,
        )
        .unwrap();
        let d = Discretizer::fit([&g], 8);
        assert_eq!(
            (d.bin(0, 0.0), d.bin(0, 0.5), d.bin(0, 1.0), d.bin(0, 2.0)),
            (0, 4, 7, 7)
        );
        let labels = d.labels(&g);
        assert_ne!(labels[0], labels[1]);
    }

    #[test]
    fn kernel_matrix_is_symmetric_on_same_lists() {
        let gs = [
            graph(3, &[(0, 1)]),
            graph(4, &[(0, 1), (1, 2), (2, 3)]),
            graph(3, &[(0, 1), (1, 2), (0, 2)]),
        ];
        let k = Kernel::WeisfeilerLehman { iterations: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feats: Vec<_> = gs
            .iter()
            .enumerate()
            .map(|(i, g)| (i, k.features(g, &disc(), &mut rng)))
            .collect();
        let m = KernelMatrix::between(&feats, &feats);
        for i in 0..3 {
            assert_eq!(m.values.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.values.get(i, j), m.values.get(j, i));
                assert!(m.values.get(i, j) <= 1.0 + 1e-12 && m.values.get(i, j) >= 0.0);
            }
        }
    }
}
