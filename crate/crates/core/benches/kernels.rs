//! Sequential vs rayon kernels, plus end-to-end sampling.
//!
//! ```text
//! cargo bench -p cugro --bench kernels
//! cargo bench -p cugro --bench kernels --no-default-features   # sequential only
//! ```

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use cugro::diffusion::{sample, BehaviorScoreModel, ScoreNetConfig, VpSchedule};
use cugro::numerics::Tensor;
use cugro::parallel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn linear(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("linear");
    for &(rows, in_dim, out_dim) in &[(256usize, 64usize, 64usize), (1024, 128, 128)] {
        let x = random(rows * in_dim, &mut rng);
        let w = random(out_dim * in_dim, &mut rng);
        let b = random(out_dim, &mut rng);
        let g = random(rows * out_dim, &mut rng);
        let label = format!("{rows}x{in_dim}x{out_dim}");
        let mut out = vec![0.0; rows * out_dim];
        let mut dx = vec![0.0; rows * in_dim];
        let mut dw = vec![0.0; out_dim * in_dim];
        let mut db = vec![0.0; out_dim];

        group.bench_with_input(BenchmarkId::new("forward_seq", &label), &(), |bench, _| {
            bench.iter(|| parallel::linear_forward_seq(black_box(&x), in_dim, &w, &b, &mut out))
        });
        group.bench_with_input(BenchmarkId::new("input_grad_seq", &label), &(), |bench, _| {
            bench.iter(|| parallel::linear_input_grad_seq(black_box(&g), &w, in_dim, out_dim, &mut dx))
        });
        group.bench_with_input(BenchmarkId::new("weight_grad_seq", &label), &(), |bench, _| {
            bench.iter(|| parallel::linear_weight_grad_seq(black_box(&g), &x, in_dim, &mut dw, &mut db))
        });
        #[cfg(feature = "parallel")]
        {
            group.bench_with_input(BenchmarkId::new("forward_par", &label), &(), |bench, _| {
                bench.iter(|| parallel::linear_forward_par(black_box(&x), in_dim, &w, &b, &mut out))
            });
            group.bench_with_input(BenchmarkId::new("input_grad_par", &label), &(), |bench, _| {
                bench.iter(|| parallel::linear_input_grad_par(black_box(&g), &w, in_dim, out_dim, &mut dx))
            });
            group.bench_with_input(BenchmarkId::new("weight_grad_par", &label), &(), |bench, _| {
                bench.iter(|| parallel::linear_weight_grad_par(black_box(&g), &x, in_dim, &mut dw, &mut db))
            });
        }
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sched = VpSchedule::new(0.1, 20.0, 25).unwrap();
    let cfg = ScoreNetConfig {
        widths: vec![64, 64],
        time_dim: 16,
    };
    let model = BehaviorScoreModel::new(4, 2, &cfg, &sched, &mut rng).unwrap();
    let n = 512;
    let states = Tensor::matrix(n, 4, random(n * 4, &mut rng)).unwrap();
    c.bench_function("behavior_sample_512x25", |bench| {
        bench.iter(|| sample(&model, &states, &sched, n, &mut ChaCha8Rng::seed_from_u64(2)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = linear, sampling
}
criterion_main!(benches);
