//! Sequential vs rayon-parallel path populations (both constructions).

use bessel_lab::pathsim::{map_paths, Construction, SimConfig};
use bessel_lab::randomtimes::last_zero_before;
use bessel_lab::{BesselParams, Executor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn population(c: &mut Criterion) {
    let mut group = c.benchmark_group("population_last_zero");
    group.sample_size(10);
    for (mu, construction) in [
        (0.25, Construction::TimeChange),
        (0.75, Construction::Direct),
    ] {
        let params = BesselParams::new(mu).unwrap();
        let mut cfg = SimConfig::new(1_000, 1.0, 1, 64);
        cfg.record_clock = false;
        for (name, exec) in [
            ("sequential", Executor::Sequential),
            ("parallel", Executor::Parallel),
        ] {
            group.bench_with_input(
                BenchmarkId::new(name, format!("{construction:?}/mu={mu}")),
                &exec,
                |b, exec| {
                    b.iter(|| {
                        map_paths(&params, &cfg, construction, *exec, |_, path| {
                            last_zero_before(&path, 1.0)
                        })
                        .unwrap()
                    })
                },
            );
        }
    }
    group.finish();
}

criterion_group!(benches, population);
criterion_main!(benches);
