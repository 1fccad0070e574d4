//! Synthetic graph families for desk-scale experiments.
//!
//! Each family is one class. Node features are a one-hot degree bucket
//! (`≤1`, `2`, `3`, `≥4`) plus independent Gaussian noise, so structure has
//! to be recovered from noisy local evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Dataset, GraphData};
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cycle,
    Star,
    Clique,
    Path,
    Grid,
    BinaryTree,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Cycle,
        Family::Star,
        Family::Clique,
        Family::Path,
        Family::Grid,
        Family::BinaryTree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Cycle => "cycle",
            Family::Star => "star",
            Family::Clique => "clique",
            Family::Path => "path",
            Family::Grid => "grid",
            Family::BinaryTree => "tree",
        }
    }

    /// Random member of the family as `(node count, edges)`.
    pub fn generate(
        self,
        rng: &mut impl Rng,
        min_nodes: usize,
        max_nodes: usize,
    ) -> (usize, Vec<(usize, usize)>) {
        let mut n = rng.random_range(min_nodes..=max_nodes);
        let mut edges = Vec::new();
        match self {
            Family::Cycle => {
                n = n.max(3);
                edges.extend((0..n).map(|i| (i, (i + 1) % n)));
            }
            Family::Star => edges.extend((1..n).map(|i| (0, i))),
            Family::Clique => {
                n = rng.random_range(4..=8);
                for u in 0..n {
                    edges.extend((u + 1..n).map(|v| (u, v)));
                }
            }
            Family::Path => edges.extend((1..n).map(|i| (i - 1, i))),
            Family::Grid => {
                let rows = rng.random_range(2..=3);
                let cols = rng.random_range(3..=5);
                n = rows * cols;
                for r in 0..rows {
                    for c in 0..cols {
                        let v = r * cols + c;
                        if c + 1 < cols {
                            edges.push((v, v + 1));
                        }
                        if r + 1 < rows {
                            edges.push((v, v + cols));
                        }
                    }
                }
            }
            Family::BinaryTree => edges.extend((1..n).map(|i| ((i - 1) / 2, i))),
        }
        (n, edges)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown graph family '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub families: Vec<Family>,
    pub per_family: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            families: Family::ALL.to_vec(),
            per_family: 100,
            min_nodes: 6,
            max_nodes: 14,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Class `i` of the result is `cfg.families[i]`.
pub fn synthetic_families(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.min_nodes < 2 || cfg.min_nodes > cfg.max_nodes {
        return Err(Error::Config(
            "synthetic node range must satisfy 2 <= min <= max".into(),
        ));
    }
    let noise = Normal::new(0.0, cfg.noise.max(0.0))
        .map_err(|e| Error::Config(format!("synthetic noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut graphs = Vec::with_capacity(cfg.families.len() * cfg.per_family);
    for (class, &family) in cfg.families.iter().enumerate() {
        for _ in 0..cfg.per_family {
            let (n, edges) = family.generate(&mut rng, cfg.min_nodes, cfg.max_nodes);
            let mut degree = vec![0usize; n];
            for &(u, v) in &edges {
                degree[u] += 1;
                degree[v] += 1;
            }
            let mut features = Tensor::zeros(n, FEATURE_DIM);
            for (v, &d) in degree.iter().enumerate() {
                let bucket = d.clamp(1, 4) - 1;
                for c in 0..FEATURE_DIM {
                    let base = if c == bucket { 1.0 } else { 0.0 };
                    features.set(v, c, base + noise.sample(&mut rng));
                }
            }
            graphs.push(GraphData::new(n, edges, features, class)?);
        }
    }
    Dataset::new("synthetic", graphs, FEATURE_DIM)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (n, e) = Family::Cycle.generate(&mut rng, 6, 6);
        assert_eq!((n, e.len()), (6, 6));
        let (n, e) = Family::BinaryTree.generate(&mut rng, 7, 7);
        assert_eq!((n, e.len()), (7, 6));
        let (n, e) = Family::Clique.generate(&mut rng, 6, 6);
        assert_eq!(e.len(), n * (n - 1) / 2);
        let (n, e) = Family::Grid.generate(&mut rng, 6, 6);
        assert!(n >= 6 && e.len() > n - 1);
    }

    #[test]
    fn dataset_has_one_class_per_family() {
        let ds = synthetic_families(&SynthConfig {
            per_family: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.class_count(), 6);
        assert_eq!(ds.feature_dim(), FEATURE_DIM);
    }
}
