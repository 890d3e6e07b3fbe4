use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hwmatch_core::bench::{windows_per_image, SyntheticIdentity, VerificationBench};
use hwmatch_core::features::{hog, DescriptorConfig};
use hwmatch_core::{ndot, Engine, EngineConfig, HashFamily, OpCounters, Scoring};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn kernels(c: &mut Criterion) {
    let v = vectors(2, 324, 1);
    c.bench_function("ndot/324", |b| b.iter(|| ndot(black_box(&v[0]), black_box(&v[1])).unwrap()));

    let fam = HashFamily::new(324, 24, 20, 2).unwrap();
    c.bench_function("simhash/324x24x20", |b| b.iter(|| fam.codes(black_box(&v[0]))));

    let glyph = SyntheticIdentity::new(3, 48).unwrap().glyph;
    let cfg = DescriptorConfig::default();
    c.bench_function("hog/48px", |b| b.iter(|| hog(black_box(&glyph), &cfg).unwrap()));
}

fn scoring(c: &mut Criterion) {
    // 2000 templates, enough for hashing to pay for itself
    let bench = VerificationBench::speedup();
    let system = bench.train(bench.engine.clone()).unwrap();
    let books: Vec<_> = system.engine.parts().iter().map(|p| p.book.clone()).collect();
    let img = bench.test_set().unwrap().images.swap_remove(0);
    let banks = system.engine.window_banks(&img).unwrap();
    let m = windows_per_image(&bench.engine, bench.canvas);
    let counters = OpCounters::new();

    let mut group = c.benchmark_group("layer2");
    group.sample_size(20);
    group.bench_function("exhaustive", |b| {
        b.iter(|| system.engine.layer2_from_banks(black_box(&banks), &counters).unwrap())
    });
    for n in [m / 10, m / 2] {
        let cfg = EngineConfig {
            scoring: Scoring::Coc {
                bits: 16,
                tables: 20,
                consensus: n,
            },
            ..bench.engine.clone()
        };
        let engine = Engine::new(cfg, books.clone()).unwrap();
        group.bench_with_input(BenchmarkId::new("coc", n), &engine, |b, e| {
            b.iter(|| e.layer2_from_banks(black_box(&banks), &counters).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, scoring);
criterion_main!(benches);
