//! Loading the configured dataset and splitting it by class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{benchmark_split_counts, DataSource, ExperimentConfig, SplitChoice};
use crate::error::{Error, Result};
use crate::graph::{carve_validation, split_by_class, Dataset, SplitSpec};
use crate::synth::synthetic_families;
use crate::tu::load_tu_dataset;

#[derive(Clone, Debug)]
pub struct Splits {
    pub full: Dataset,
    pub spec: SplitSpec,
    pub train: Dataset,
    /// Validation classes, or held-out graphs of the training classes when
    /// the split has none.
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(s) => synthetic_families(s),
        DataSource::Tu(_) => load_tu_dataset(&cfg.resolved_data_path().expect("tu source")),
    }
}

fn resolve_split(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<SplitSpec> {
    let classes = dataset.classes();
    match &cfg.split {
        SplitChoice::Explicit { train, val, test } => SplitSpec::new(
            train.iter().copied(),
            val.iter().copied(),
            test.iter().copied(),
        ),
        SplitChoice::Random { counts } => SplitSpec::random(&classes, *counts, cfg.split_seed),
        SplitChoice::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            SplitSpec::from_text(&text, &classes)
        }
        SplitChoice::Default => match &cfg.data {
            // all but the last two families train, the last two test
            DataSource::Synthetic(_) if classes.len() >= 3 => {
                let cut = classes.len() - 2;
                SplitSpec::new(
                    classes[..cut].iter().copied(),
                    [],
                    classes[cut..].iter().copied(),
                )
            }
            _ => {
                let counts = benchmark_split_counts(dataset.name()).ok_or_else(|| {
                    Error::Config(format!(
                        "no default split for '{}'; set split.counts, split.train/val/test or split.file",
                        dataset.name()
                    ))
                })?;
                SplitSpec::random(&classes, counts, cfg.split_seed)
            }
        },
    }
}

/// Loads and splits the configured dataset.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Splits> {
    let full = load_dataset(cfg)?;
    prepare_from(cfg, full)
}

pub fn prepare_from(cfg: &ExperimentConfig, full: Dataset) -> Result<Splits> {
    let spec = resolve_split(cfg, &full)?;
    let (train, val, test) = split_by_class(&full, &spec)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(
            "train and test partitions must both be non-empty".into(),
        ));
    }
    let (train, val) = if val.is_empty() && cfg.val_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.split_seed);
        carve_validation(&train, cfg.val_fraction, &mut rng)
    } else {
        (train, val)
    };
    Ok(Splits {
        full,
        spec,
        train,
        val,
        test,
    })
}
