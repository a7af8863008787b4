use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isoshape::cluster_id::{build_clusters, DEFAULT_DELTA};
use isoshape::{fit_ridge, threshold_intervals, DetectionParams};
use isoshape_bench::{corpus, detections, pool};

fn bench_threshold(c: &mut Criterion) {
    let spectra = corpus(2, 200, 0.001);
    let threshold = DetectionParams::default().threshold;
    c.bench_function("threshold_intervals/300Da@0.001", |b| {
        b.iter(|| threshold_intervals(&spectra[0], threshold))
    });
}

fn bench_clusters(c: &mut Criterion) {
    let spectra = corpus(20, 200, 0.002);
    let pooled = pool(&detections(&spectra));
    c.bench_function("build_clusters/20x200", |b| b.iter(|| build_clusters(&pooled, DEFAULT_DELTA)));
}

fn bench_ridge(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_ridge");
    for &(n, p) in &[(90usize, 100usize), (200, 20)] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{p}")), &x, |b, x| {
            b.iter(|| fit_ridge(x, &labels, 1.0).expect("converges"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_threshold, bench_clusters, bench_ridge);
criterion_main!(benches);
