use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use graphmeta::autodiff::MetaOrder;
use graphmeta::backbone::init_params;
use graphmeta::graph::EpisodeSampler;
use graphmeta::meta::{MetaConfig, MetaLearner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn meta_gradient(c: &mut Criterion) {
    let ds = graphmeta_bench::dataset(20);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let episode = EpisodeSampler::new(&ds, 2, 5, 5).unwrap().sample(&mut rng);
    let backbone = graphmeta_bench::backbone(2, 16);
    let params = init_params(&backbone, ds.feature_dim(), 2, &mut rng);
    let mut group = c.benchmark_group("meta_gradient");
    group.sample_size(10);
    for order in [MetaOrder::Second, MetaOrder::First] {
        let learner = MetaLearner::new(
            backbone.clone(),
            MetaConfig {
                inner_lr: 0.2,
                order,
                ..MetaConfig::default()
            },
        );
        for steps in [4, 9, 15] {
            group.bench_with_input(
                BenchmarkId::new(order.to_string(), steps),
                &steps,
                |b, &t| b.iter(|| learner.meta_gradient(&params, &episode, t).unwrap()),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, meta_gradient);
criterion_main!(benches);
