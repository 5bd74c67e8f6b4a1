use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use selfmap_core::integrator::IntegratorControls;
use selfmap_core::shooting::{sweep, v_grid};
use selfmap_core::{Execution, MultPair};

fn sweeps(c: &mut Criterion) {
    let controls = IntegratorControls::default();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (m0, m1) in [(2, 2), (6, 6)] {
        let pair = MultPair::new(m0, m1).unwrap();
        let grid = v_grid(0.1, 1e4, 64, true).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let id = BenchmarkId::new(format!("{exec:?}"), format!("({m0},{m1})"));
            group.bench_with_input(id, &grid, |b, grid| {
                b.iter(|| sweep(pair, grid, &controls, exec))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
