use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use slide::corruption::{empirical_moments, CorruptionConfig};
use slide::kernel::{median_widths, self_gram};
use slide::stack::{train_stack, StackConfig};
use slide::svm::train_ovr;
use slide::{DataMatrix, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn data(d: usize, n: usize) -> DataMatrix {
    DataMatrix::new(DMatrix::from_fn(d, n, |r, c| ((r * 31 + c * 17) as f64 * 0.37).sin() + (c % 3) as f64)).unwrap()
}

fn bench_gram(c: &mut Criterion) {
    let (_, reps) = train_stack(&data(20, 600), &StackConfig::new(0.5, 0.0, 2, 1e-5)).unwrap();
    let params = median_widths(&reps, 0);
    let mut group = c.benchmark_group("gram_600");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| self_gram(&reps, &params, exec).unwrap()));
    }
    group.finish();
}

fn bench_moments(c: &mut Criterion) {
    let x = data(10, 50);
    let cfg = CorruptionConfig::new(0.5, 2000, 7).unwrap();
    let mut group = c.benchmark_group("empirical_moments_m2000");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| empirical_moments(&x, &cfg, exec)));
    }
    group.finish();
}

fn bench_ovr(c: &mut Criterion) {
    let x = data(8, 400);
    let labels: Vec<i64> = (0..400).map(|i| (i % 4) as i64).collect();
    let (_, reps) = train_stack(&x, &StackConfig::new(0.5, 0.0, 1, 1e-5)).unwrap();
    let k = self_gram(&reps, &median_widths(&reps, 0), Exec::Parallel).unwrap();
    let mut group = c.benchmark_group("train_ovr_4class_400");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| train_ovr(&k, &labels, 1.0, 1e-3, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_gram, bench_moments, bench_ovr);
criterion_main!(benches);
