//! Sequential (one worker) against the default pool for the data-parallel
//! kernels. Build with `--no-default-features` to bench the fallback path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use stkkt::experiment::{assemble_instance, generate_data, RunConfig};
use stkkt::kkt::assemble_kkt_matrix;
use stkkt::linalg::{LinearOperator, Preconditioner};
use stkkt::mesh::SpaceTimeDecomposition;
use stkkt::par;
use stkkt::schwarz::{LocalSolver, OneLevelSchwarz};

fn pools() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", 0)]
}

fn kernels(c: &mut Criterion) {
    let cfg = RunConfig {
        cells: 8,
        steps: 8,
        data_refine: 1,
        ..RunConfig::default()
    };
    let data = generate_data(&cfg).unwrap();
    let inst = assemble_instance(&cfg, &data).unwrap();
    let a = &inst.system.matrix;
    let dec = SpaceTimeDecomposition::build(&inst.mesh, &inst.grid, cfg.parts, cfg.time_parts, cfg.overlap).unwrap();
    let pc = OneLevelSchwarz::build(a, &dec, LocalSolver::Ilu(0)).unwrap();
    let x = inst.system.rhs.clone();

    let mut group = c.benchmark_group("kernels");
    group.sample_size(20);
    for (label, workers) in pools() {
        group.bench_function(BenchmarkId::new("matvec", label), |b| {
            par::with_workers(workers, || {
                let mut y = vec![0.0; x.len()];
                b.iter(|| a.apply(black_box(&x), &mut y))
            })
        });
        group.bench_function(BenchmarkId::new("ras_apply", label), |b| {
            par::with_workers(workers, || {
                let mut z = vec![0.0; x.len()];
                b.iter(|| pc.apply(black_box(&x), &mut z))
            })
        });
        group.bench_function(BenchmarkId::new("ras_setup", label), |b| {
            par::with_workers(workers, || {
                b.iter(|| OneLevelSchwarz::build(a, &dec, LocalSolver::Ilu(0)).unwrap())
            })
        });
        group.bench_function(BenchmarkId::new("kkt_assembly", label), |b| {
            par::with_workers(workers, || b.iter(|| assemble_kkt_matrix(&inst.inputs()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
