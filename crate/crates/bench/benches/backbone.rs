use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use graphmeta::autodiff::{grad, ParamVars, Tape};
use graphmeta::backbone::{episode_forward, init_params};
use graphmeta::graph::EpisodeSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward_backward(c: &mut Criterion) {
    let ds = graphmeta_bench::dataset(20);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let episode = EpisodeSampler::new(&ds, 5, 5, 5).unwrap().sample(&mut rng);
    let mut group = c.benchmark_group("episode_loss");
    group.sample_size(20);
    for hidden in [16, 64, 128] {
        let cfg = graphmeta_bench::backbone(3, hidden);
        let params = init_params(&cfg, ds.feature_dim(), 5, &mut rng);
        group.bench_with_input(BenchmarkId::new("forward", hidden), &params, |b, p| {
            b.iter(|| {
                let mut tape = Tape::new();
                let vars = ParamVars::constants(&mut tape, p);
                episode_forward(&mut tape, &episode.support, &vars, &cfg)
                    .unwrap()
                    .loss
            })
        });
        group.bench_with_input(
            BenchmarkId::new("forward_backward", hidden),
            &params,
            |b, p| {
                b.iter(|| {
                    grad(p, |tape, vars| {
                        Ok(episode_forward(tape, &episode.support, vars, &cfg)?.loss)
                    })
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
