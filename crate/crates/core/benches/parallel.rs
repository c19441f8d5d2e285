use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::dvector;
use std::hint::black_box;
use utmost_core::par::Execution;
use utmost_core::sanity::{self, Tolerances};
use utmost_core::sim::*;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo(c: &mut Criterion) {
    let model = MeasurementModel::Toa;
    let scenario = SimScenario {
        target: dvector![0.1, -0.3],
        model,
        noise: iid_noise(model, 4, DEFAULT_NOISE_STD).unwrap(),
        trials: 200,
        seed: 1,
        grid: GridSpec {
            resolution: 101,
            ..GridSpec::cube(&[0.0, 0.0], 2.0)
        },
        noiseless: false,
    };
    let placements = [Placement {
        name: "uniform".into(),
        sensors: uniform_placement(4, 2, 1.0).unwrap(),
    }];
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_monte_carlo_with(black_box(&scenario), &placements, exec).unwrap())
        });
    }
    group.finish();
}

fn sanity_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sanity_sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sanity::run_default(&Tolerances::default(), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, sanity_sweep);
criterion_main!(benches);
