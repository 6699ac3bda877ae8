use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kamred::arithmetics::{estimate_psi, Frequency, DEFAULT_LATTICE_BUDGET};
use kamred::fourier::{multiply_with, FourierMatrixSeries};
use kamred::mat2::{CMat2, Mat2};
use kamred::rotation::{lyapunov_batch, CocycleSpec};
use kamred::weights::{verify_subadditivity, WeightSpec};
use kamred::Execution;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn dense_series(rng: &mut ChaCha8Rng, d: usize, max_l1: i32) -> FourierMatrixSeries {
    let mut coeffs = Vec::new();
    for a in -max_l1..=max_l1 {
        for b in -max_l1..=max_l1 {
            if a.abs() + b.abs() <= max_l1 {
                let m = CMat2::from_entries(std::array::from_fn(|_| Complex64::new(rng.gen(), rng.gen())));
                coeffs.push((if d == 2 { vec![a, b] } else { vec![a, b, 0] }, m));
            }
        }
    }
    FourierMatrixSeries::from_coeffs(d, coeffs, false).unwrap()
}

fn convolution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = dense_series(&mut rng, 2, 24);
    let g = dense_series(&mut rng, 2, 24);
    let mut group = c.benchmark_group("convolution");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, f.len()), |b| b.iter(|| multiply_with(&f, &g, exec).unwrap()));
    }
    group.finish();
}

fn psi_enumeration(c: &mut Criterion) {
    let freq = Frequency::golden();
    let mut group = c.benchmark_group("psi_enumeration");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 1000), |b| {
            b.iter(|| estimate_psi(&freq, 1000, DEFAULT_LATTICE_BUDGET, exec).unwrap())
        });
    }
    group.finish();
}

fn lyapunov(c: &mut Criterion) {
    let freq = Frequency::golden();
    let specs: Vec<CocycleSpec> = (0..16)
        .map(|i| {
            let amp = 0.05 * (i as f64 + 1.0);
            let f = FourierMatrixSeries::real_trig(2, &[(vec![1, 0], Mat2::diag(amp, -amp), Mat2::zero())]).unwrap();
            CocycleSpec::new(freq.clone(), Mat2::j(), f, 0.2).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("lyapunov_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, specs.len()), |b| {
            b.iter(|| lyapunov_batch(&specs, 500.0, 0.02, exec))
        });
    }
    group.finish();
}

fn subadditivity(c: &mut Criterion) {
    let w = WeightSpec::gevrey(2.0).unwrap();
    let mut group = c.benchmark_group("subadditivity");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 1_000_000), |b| {
            b.iter(|| verify_subadditivity(&w, 1e4, 1_000_000, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, convolution, psi_enumeration, lyapunov, subadditivity);
criterion_main!(benches);
