//! Writes graph embeddings of a trained backbone for outside analysis.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::csv::CsvWriter;
use crate::autodiff::ParamSet;
use crate::backbone::{embed_values, BackboneConfig};
use crate::error::Result;
use crate::graph::Dataset;

/// Embeds `sample_count` graphs drawn without replacement under `seed`
/// (clamped to the dataset size) and writes one row per graph in dataset
/// order: index, class id, then `z0..z{d-1}`. Values use shortest round-trip
/// formatting, so equal inputs give identical files.
pub fn export_embeddings(
    params: &ParamSet,
    backbone: &BackboneConfig,
    dataset: &Dataset,
    sample_count: usize,
    seed: u64,
    path: &Path,
) -> Result<usize> {
    if sample_count > dataset.len() {
        log::warn!(
            "export: {sample_count} graphs requested, dataset has {}",
            dataset.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = sample(&mut rng, dataset.len(), sample_count.min(dataset.len())).into_vec();
    ids.sort_unstable();
    let graphs: Vec<_> = ids.iter().map(|&i| dataset.graph(i).as_ref()).collect();
    let z = embed_values(&graphs, params, backbone)?;
    let d = backbone.embedding_dim();
    let mut columns = vec!["graph_id".to_string(), "class".to_string()];
    columns.extend((0..d).map(|j| format!("z{j}")));
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut w = CsvWriter::create(path, "embeddings", &columns)?;
    for ((i, g), row) in ids.iter().zip(&graphs).zip(&z) {
        let mut fields = vec![i.to_string(), g.class_id().to_string()];
        fields.extend(row.data().iter().map(f64::to_string));
        w.row(&fields)?;
    }
    Ok(graphs.len())
}
