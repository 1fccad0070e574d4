//! Average node information: how far each node embedding is from the mean of
//! its neighbors' embeddings, in L1 norm, averaged over nodes and graphs.

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct AniValue(f64);

impl AniValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Final-layer node embeddings of one graph with the (pooled) topology they
/// live on.
#[derive(Clone, Debug)]
pub struct NodeActivations {
    pub adjacency: Adjacency,
    pub hidden: Tensor,
}

/// `(1/n) Σ_j ‖[(I − D⁻¹A) H]_j‖₁`. A node without neighbors contributes
/// `‖H_j‖₁`.
pub fn ani_graph(adjacency: &Adjacency, hidden: &Tensor) -> Result<AniValue> {
    let n = adjacency.node_count();
    if n == 0 || hidden.rows() != n {
        return Err(Error::shape(
            "ani_graph",
            format!("{} hidden rows for {n} nodes", hidden.rows()),
        ));
    }
    let d = hidden.cols();
    let mut total = 0.0;
    let mut mean = vec![0.0; d];
    for v in 0..n {
        let neighbors = adjacency.neighbors(v);
        mean.iter_mut().for_each(|m| *m = 0.0);
        if !neighbors.is_empty() {
            let w = 1.0 / neighbors.len() as f64;
            for &u in neighbors {
                for (m, x) in mean.iter_mut().zip(hidden.row(u)) {
                    *m += w * x;
                }
            }
        }
        total += hidden
            .row(v)
            .iter()
            .zip(&mean)
            .map(|(h, m)| (h - m).abs())
            .sum::<f64>();
    }
    Ok(AniValue(total / n as f64))
}

/// Mean of [`ani_graph`] over a batch.
pub fn ani_batch<'a>(batch: impl IntoIterator<Item = &'a NodeActivations>) -> Result<AniValue> {
    let mut total = 0.0;
    let mut count = 0usize;
    for item in batch {
        total += ani_graph(&item.adjacency, &item.hidden)?.0;
        count += 1;
    }
    if count == 0 {
        return Err(Error::shape("ani_batch", "empty batch"));
    }
    Ok(AniValue(total / count as f64))
}
