use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lbtsim::experiment::{sweep, sweep_points, Execution};
use lbtsim::scenario::Scenario;

fn sweep_modes(c: &mut Criterion) {
    let loaded = Scenario::default().resolve(Path::new("."), "bench").unwrap();
    // a thin slice of the full sweep: every fourth size, four seeds each
    let points: Vec<_> = sweep_points(1..=38, 4, 1)
        .into_iter()
        .filter(|(n, _)| n % 4 == 1)
        .collect();

    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_with_input(BenchmarkId::new(name, points.len()), &points, |b, pts| {
            b.iter(|| sweep(&loaded, black_box(pts), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sweep_modes);
criterion_main!(benches);
