//! Parameter-free nearest-prototype classification, either in a kernel's
//! feature space or on explicit embeddings.

use rand::Rng;

use super::kernels::{Discretizer, Histogram, Kernel, KernelMatrix};
use crate::autodiff::ParamSet;
use crate::backbone::{embed_values, BackboneConfig};
use crate::error::{Error, Result};
use crate::graph::{Episode, LabeledGraph};
use crate::tensor::Tensor;

fn class_sizes(labels: &[usize], way: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; way];
    for &y in labels {
        *sizes
            .get_mut(y)
            .ok_or_else(|| Error::shape("prototype", format!("label {y} for {way} classes")))? += 1;
    }
    Ok(sizes)
}

/// Squared feature-space distances from each query to each class mean:
/// `k(x,x) − (2/K) Σ_s k(x,s) + (1/K²) Σ_{s,s'} k(s,s')`. Classes without
/// support members are infinitely far away.
pub fn kernel_prototype_distances(
    k_qs: &Tensor,
    k_ss: &Tensor,
    k_qq: &[f64],
    support_labels: &[usize],
    way: usize,
) -> Result<Tensor> {
    let (q, s) = (k_qs.rows(), k_qs.cols());
    if k_ss.shape() != [s, s] || k_qq.len() != q || support_labels.len() != s {
        return Err(Error::shape(
            "kernel_prototype_distances",
            format!(
                "q×s {:?}, s×s {:?}, {} diagonals, {} labels",
                k_qs.shape(),
                k_ss.shape(),
                k_qq.len(),
                support_labels.len()
            ),
        ));
    }
    let sizes = class_sizes(support_labels, way)?;
    let mut within = vec![0.0; way];
    for (i, &a) in support_labels.iter().enumerate() {
        for (j, &b) in support_labels.iter().enumerate() {
            if a == b {
                within[a] += k_ss.get(i, j);
            }
        }
    }
    let mut out = Tensor::zeros(q, way);
    for x in 0..q {
        let mut cross = vec![0.0; way];
        for (j, &c) in support_labels.iter().enumerate() {
            cross[c] += k_qs.get(x, j);
        }
        for c in 0..way {
            let d = if sizes[c] == 0 {
                f64::INFINITY
            } else {
                let k = sizes[c] as f64;
                k_qq[x] - 2.0 * cross[c] / k + within[c] / (k * k)
            };
            out.set(x, c, d);
        }
    }
    Ok(out)
}

/// Squared Euclidean distances from each query row to each class mean.
pub fn embedding_prototype_distances(
    query: &Tensor,
    support: &Tensor,
    support_labels: &[usize],
    way: usize,
) -> Result<Tensor> {
    if query.cols() != support.cols() || support.rows() != support_labels.len() {
        return Err(Error::shape(
            "embedding_prototype_distances",
            format!(
                "query {:?}, support {:?}, {} labels",
                query.shape(),
                support.shape(),
                support_labels.len()
            ),
        ));
    }
    let sizes = class_sizes(support_labels, way)?;
    let d = support.cols();
    let mut protos = Tensor::zeros(way, d);
    for (r, &c) in support_labels.iter().enumerate() {
        for (j, &v) in support.row(r).iter().enumerate() {
            protos.set(c, j, protos.get(c, j) + v / sizes[c] as f64);
        }
    }
    let mut out = Tensor::zeros(query.rows(), way);
    for x in 0..query.rows() {
        for c in 0..way {
            let dist = if sizes[c] == 0 {
                f64::INFINITY
            } else {
                query
                    .row(x)
                    .iter()
                    .zip(protos.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            };
            out.set(x, c, dist);
        }
    }
    Ok(out)
}

/// Index of the smallest distance per row, ties to the lowest label.
pub fn nearest_prototype(distances: &Tensor) -> Vec<usize> {
    (0..distances.rows())
        .map(|r| {
            let row = distances.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn label_accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub accuracy: f64,
}

fn features(
    kernel: Kernel,
    graphs: &[LabeledGraph],
    disc: &Discretizer,
    rng: &mut impl Rng,
) -> Vec<(usize, Histogram)> {
    graphs
        .iter()
        .map(|g| (g.position, kernel.features(&g.graph, disc, rng)))
        .collect()
}

/// Kernel prototypical classifier on one episode.
pub fn kernel_episode(
    kernel: Kernel,
    episode: &Episode,
    disc: &Discretizer,
    rng: &mut impl Rng,
) -> Result<Prediction> {
    let support = features(kernel, &episode.support, disc, rng);
    let query = features(kernel, &episode.query, disc, rng);
    let k_qs = KernelMatrix::between(&query, &support).values;
    let k_ss = KernelMatrix::between(&support, &support).values;
    let k_qq: Vec<f64> = query
        .iter()
        .map(|(_, h)| super::kernels::cosine(h, h))
        .collect();
    let dist =
        kernel_prototype_distances(&k_qs, &k_ss, &k_qq, &episode.support_labels(), episode.way)?;
    let labels = nearest_prototype(&dist);
    Ok(Prediction {
        accuracy: label_accuracy(&labels, &episode.query_labels()),
        labels,
    })
}

fn stack(rows: Vec<Tensor>) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = rows.into_iter().map(Tensor::into_data).collect();
    Tensor::from_rows(&rows)
}

/// Prototypical classification on graph embeddings of a trained backbone.
pub fn embedding_episode(
    params: &ParamSet,
    backbone: &BackboneConfig,
    episode: &Episode,
) -> Result<Prediction> {
    let embed = |gs: &[LabeledGraph]| {
        let graphs: Vec<_> = gs.iter().map(|g| g.graph.as_ref()).collect();
        embed_values(&graphs, params, backbone).and_then(stack)
    };
    let dist = embedding_prototype_distances(
        &embed(&episode.query)?,
        &embed(&episode.support)?,
        &episode.support_labels(),
        episode.way,
    )?;
    let labels = nearest_prototype(&dist);
    Ok(Prediction {
        accuracy: label_accuracy(&labels, &episode.query_labels()),
        labels,
    })
}
