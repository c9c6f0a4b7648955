use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use meshloop::apps::{gen_mesh, CellArea};
use meshloop::exec::{Backend, BackendConfig, SerialBackend, ThreadsBackend};
use meshloop::ElemKind;

fn cell_area(c: &mut Criterion) {
    let mut group = c.benchmark_group("cell_area_n64");
    let mut mesh = gen_mesh(64).mesh;
    let app = CellArea::setup(&mut mesh, ElemKind::F64).expect("generated mesh has cells");
    mesh.freeze();
    group.bench_function("serial", |b| {
        let mut backend = SerialBackend::new(mesh.clone());
        b.iter(|| app.run(&mut backend).expect("runs"))
    });
    for bs in [64, 256, 1024] {
        group.bench_with_input(BenchmarkId::new("threads4", bs), &bs, |b, &bs| {
            let mut backend =
                ThreadsBackend::new(mesh.clone(), &BackendConfig::threads(4, bs)).expect("valid config");
            b.iter(|| {
                app.run(&mut backend).expect("runs");
                backend.perf().total_time()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, cell_area);
criterion_main!(benches);
