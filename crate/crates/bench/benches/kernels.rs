use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use graphmeta::baselines::{
    graphlet_kernel, sp_kernel, wl_kernel, Discretizer, Histogram, Kernel, KernelMatrix,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pairwise(c: &mut Criterion) {
    let ds = graphmeta_bench::dataset(4);
    let disc = Discretizer::fit(ds.graphs().iter().map(|g| g.as_ref()), 8);
    let (a, b) = (ds.graph(0).clone(), ds.graph(20).clone());
    let mut group = c.benchmark_group("kernel_pair");
    group.bench_function("wl_3", |bench| bench.iter(|| wl_kernel(&a, &b, 3, &disc)));
    group.bench_function("sp_10", |bench| bench.iter(|| sp_kernel(&a, &b, 10)));
    group.bench_function("graphlet_1000", |bench| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        bench.iter(|| graphlet_kernel(&a, &b, 1000, &mut rng))
    });
    group.finish();
}

fn matrix(c: &mut Criterion) {
    let ds = graphmeta_bench::dataset(10);
    let disc = Discretizer::fit(ds.graphs().iter().map(|g| g.as_ref()), 8);
    let mut group = c.benchmark_group("kernel_matrix");
    for kernel in [
        Kernel::WeisfeilerLehman { iterations: 3 },
        Kernel::ShortestPath { max_length: 10 },
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feats: Vec<(usize, Histogram)> = ds
            .graphs()
            .iter()
            .enumerate()
            .map(|(i, g)| (i, kernel.features(g, &disc, &mut rng)))
            .collect();
        group.bench_with_input(
            BenchmarkId::new(kernel.name(), feats.len()),
            &feats,
            |bench, f| bench.iter(|| KernelMatrix::between(f, f)),
        );
    }
    group.finish();
}

criterion_group!(benches, pairwise, matrix);
criterion_main!(benches);
