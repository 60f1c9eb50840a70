//! Sequential against data-parallel execution of the three hot loops.
//!
//! Each benchmark runs once inside a one-thread rayon pool and once inside
//! the default pool. Build with `--no-default-features` to benchmark the
//! sequential fallback, where both variants run on the calling thread.

use std::hint::black_box;

use carpet_core::carpet::{build_graph, validate_params, CarpetGraph};
use carpet_core::coupling::{coupling_probability, Coupler};
use carpet_core::harmonic::{self, BoxDomain};
use carpet_core::heat::{heat_kernel_row, TransitionOperator};
use criterion::{criterion_group, criterion_main, Criterion};
use rayon::{ThreadPool, ThreadPoolBuilder};

fn pools() -> Vec<(String, ThreadPool)> {
    let default = ThreadPoolBuilder::new().build().unwrap();
    let n = default.current_num_threads();
    vec![
        ("1 thread".into(), ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("default pool ({n} threads)"), default),
    ]
}

fn carpet(n: u32) -> CarpetGraph {
    build_graph(n, &validate_params(2, 3, 1).unwrap()).unwrap()
}

fn dirichlet_solve(c: &mut Criterion) {
    let g = carpet(5);
    let domain = BoxDomain::of_box(&g, 5).unwrap();
    let b = domain.boundary[domain.boundary.len() / 2];
    let mut group = c.benchmark_group("dirichlet_solve_level5");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(&name, |bench| {
            bench.iter(|| pool.install(|| harmonic::harmonic_measure(&domain, black_box(b), 1e-10).unwrap()))
        });
    }
    group.finish();
}

fn heat_steps(c: &mut Criterion) {
    let g = carpet(5);
    let op = TransitionOperator::new(g.network());
    let x = g.central_vertex();
    let mut group = c.benchmark_group("heat_256_steps_level5");
    for (name, pool) in pools() {
        group.bench_function(&name, |bench| {
            bench.iter(|| pool.install(|| heat_kernel_row(&op, black_box(x), 256)))
        });
    }
    group.finish();
}

fn coupling_trials(c: &mut Criterion) {
    let g = carpet(4);
    let coupler = Coupler::new(&g, 3).unwrap();
    let mut group = c.benchmark_group("coupling_2000_trials_level3_box");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(&name, |bench| {
            bench.iter(|| {
                pool.install(|| coupling_probability(&coupler, 0, 1, 3, 2000, 1_000_000, black_box(42), false).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, dirichlet_solve, heat_steps, coupling_trials);
criterion_main!(benches);
