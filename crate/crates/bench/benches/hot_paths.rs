use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fracshe_bench::white_regime;
use fracshe_core::clt::BallWeights;
use fracshe_core::{evaluate_kernel, k_beta, CovarianceModel, Fourier, GridSpec, ModelSpec, NoiseSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernel(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel");
    for n in [512usize, 4096] {
        let grid = GridSpec::new(1, 16.0, n).unwrap();
        let fourier = Fourier::new(&grid);
        g.bench_with_input(BenchmarkId::new("evaluate_1d", n), &n, |b, _| {
            b.iter(|| evaluate_kernel(&fourier, black_box(1.5), 1.0).unwrap())
        });
    }
    let grid = GridSpec::new(2, 16.0, 128).unwrap();
    let fourier = Fourier::new(&grid);
    g.bench_function("evaluate_2d_128", |b| b.iter(|| evaluate_kernel(&fourier, black_box(1.5), 1.0).unwrap()));
    g.finish();
}

fn noise(c: &mut Criterion) {
    let grid = GridSpec::new(1, 40.0, 1024).unwrap();
    let model = CovarianceModel::new(1, 1.5, ModelSpec::RieszKernel { beta: 0.5, mu: vec![] }).unwrap();
    let sampler = NoiseSampler::new(&grid, &model).unwrap();
    let mut stream = sampler.stream(ChaCha8Rng::seed_from_u64(1));
    let mut out = vec![0.0; grid.len()];
    c.bench_function("noise/riesz_increment_1024", |b| b.iter(|| stream.fill(black_box(1e-3), &mut out)));
}

fn solver(c: &mut Criterion) {
    let sim = white_regime(1024);
    let ball = BallWeights::new(sim.grid(), 16.0).unwrap();
    c.bench_function("solver/replica_160_steps", |b| {
        let mut rep = 0;
        b.iter(|| {
            rep += 1;
            let mut g = 0.0;
            sim.run(7, rep, 160, |_, u| {
                g = ball.apply(u);
                Ok(())
            })
            .unwrap();
            g
        })
    });
}

fn constants(c: &mut Criterion) {
    c.bench_function("constants/k_beta_1d", |b| b.iter(|| k_beta(1, black_box(0.5)).unwrap()));
}

criterion_group!(benches, kernel, noise, solver, constants);
criterion_main!(benches);
