//! Quick self-tests of the numerical core, runnable from the command line.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    finite_diff_check, params_from_bytes, params_from_text, params_to_bytes, params_to_text,
    Activation, MetaOrder, ParamSet,
};
use crate::backbone::{embed_values, episode_forward, init_params, BackboneConfig};
use crate::baselines::{Discretizer, Kernel};
use crate::error::Result;
use crate::graph::{EpisodeSampler, GraphData};
use crate::meta::{MetaConfig, MetaLearner};
use crate::synth::{synthetic_families, Family, SynthConfig};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn fixture() -> Result<(crate::graph::Dataset, BackboneConfig)> {
    let ds = synthetic_families(&SynthConfig {
        families: vec![Family::Cycle, Family::Star, Family::Grid],
        per_family: 4,
        min_nodes: 5,
        max_nodes: 8,
        ..SynthConfig::default()
    })?;
    let backbone = BackboneConfig {
        layer_count: 2,
        hidden_dim: 4,
        readout_activation: Activation::Identity,
        ..BackboneConfig::default()
    };
    Ok((ds, backbone))
}

fn check_gradients() -> Result<CheckResult> {
    let (ds, backbone) = fixture()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(&backbone, ds.feature_dim(), 3, &mut rng);
    let episode = EpisodeSampler::new(&ds, 3, 1, 1)?.sample(&mut rng);
    let graphs = [episode.support.clone(), episode.query.clone()].concat();
    let report = finite_diff_check(
        &params,
        |tape, vars| Ok(episode_forward(tape, &graphs, vars, &backbone)?.loss),
        1e-6,
        40,
        1,
    );
    Ok(CheckResult {
        name: "backbone gradient",
        passed: report.max_rel_error < 1e-4,
        detail: format!(
            "max relative error {:.2e} over {} coordinates",
            report.max_rel_error, report.coordinates
        ),
    })
}

fn check_second_order() -> Result<CheckResult> {
    let (ds, backbone) = fixture()?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = init_params(&backbone, ds.feature_dim(), 3, &mut rng);
    let episode = EpisodeSampler::new(&ds, 3, 1, 1)?.sample(&mut rng);
    let learner = MetaLearner::new(
        backbone,
        MetaConfig {
            inner_lr: 0.5,
            order: MetaOrder::Second,
            ..MetaConfig::default()
        },
    );
    let (analytic, _, _) = learner.meta_gradient(&params, &episode, 2)?;
    let outer = |p: &ParamSet| -> Result<f64> {
        let (adapted, _) = learner.adapt(p, &episode.support, None, 2)?;
        Ok(learner.evaluate(&adapted, &episode.query)?.loss)
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (name, t) in params.iter() {
        // a few entries of every tensor
        for i in (0..t.len()).step_by(t.len().div_ceil(3)) {
            let mut probe = params.clone();
            probe.get_mut(name).expect("listed").data_mut()[i] += h;
            let plus = outer(&probe)?;
            probe.get_mut(name).expect("listed").data_mut()[i] -= 2.0 * h;
            let minus = outer(&probe)?;
            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic.get(name)?.data()[i];
            worst = worst.max((exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8));
            coordinates += 1;
        }
    }
    Ok(CheckResult {
        name: "meta-gradient through two inner steps",
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.2e} over {coordinates} coordinates"),
    })
}

fn check_checkpoint() -> Result<CheckResult> {
    let (ds, backbone) = fixture()?;
    let params = init_params(
        &backbone,
        ds.feature_dim(),
        3,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    let text = params_from_text(&params_to_text(&params))?;
    let bytes = params_from_bytes(&params_to_bytes(&params))?;
    let passed = text.bitwise_eq(&params) && bytes.bitwise_eq(&params);
    Ok(CheckResult {
        name: "checkpoint round trip",
        passed,
        detail: format!("{} tensors, {} values", params.len(), params.value_count()),
    })
}

fn check_permutation() -> Result<CheckResult> {
    let (ds, backbone) = fixture()?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = init_params(&backbone, ds.feature_dim(), 3, &mut rng);
    let disc = Discretizer::fit(ds.graphs().iter().map(|g| g.as_ref()), 8);
    let mut worst: f64 = 0.0;
    let mut kernels_ok = true;
    for g in ds.graphs() {
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rng);
        let p: GraphData = g.permuted(&perm)?;
        let z = embed_values(&[g.as_ref(), &p], &params, &backbone)?;
        worst = worst.max(z[0].max_abs_diff(&z[1]));
        for kernel in [
            Kernel::WeisfeilerLehman { iterations: 3 },
            Kernel::ShortestPath { max_length: 10 },
        ] {
            let k = crate::baselines::kernels::kernel_value(kernel, g, &p, &disc, &mut rng);
            kernels_ok &= (k - 1.0).abs() < 1e-9;
        }
    }
    Ok(CheckResult {
        name: "node permutation invariance",
        passed: worst < 1e-9 && kernels_ok,
        detail: format!(
            "max embedding difference {worst:.2e}, kernels {}",
            if kernels_ok { "ok" } else { "differ" }
        ),
    })
}

type Check = fn() -> Result<CheckResult>;

/// Runs every check; a check that errors counts as failed.
pub fn run_checks() -> Vec<CheckResult> {
    let checks: [(&'static str, Check); 4] = [
        ("backbone gradient", check_gradients),
        ("meta-gradient through two inner steps", check_second_order),
        ("checkpoint round trip", check_checkpoint),
        ("node permutation invariance", check_permutation),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run_checks() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
