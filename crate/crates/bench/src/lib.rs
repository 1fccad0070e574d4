//! Shared fixtures for the benchmarks.

use graphmeta::autodiff::Activation;
use graphmeta::backbone::BackboneConfig;
use graphmeta::graph::Dataset;
use graphmeta::synth::{synthetic_families, SynthConfig};

/// Six synthetic families, `per_family` graphs each, fixed seed.
pub fn dataset(per_family: usize) -> Dataset {
    synthetic_families(&SynthConfig {
        per_family,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}

/// Backbone at the given width and depth, identity readout.
pub fn backbone(layers: usize, hidden: usize) -> BackboneConfig {
    BackboneConfig {
        layer_count: layers,
        hidden_dim: hidden,
        readout_activation: Activation::Identity,
        ..BackboneConfig::default()
    }
}
