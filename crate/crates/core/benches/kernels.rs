//! Sequential (one worker) versus the default thread pool on the hot
//! kernels. Build with `--no-default-features` to time the fallback path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sgvi::lcp_solver::SolverConfig;
use sgvi::mc_baseline::{mc_run, McConfig};
use sgvi::mesh::build_uniform_mesh;
use sgvi::par;
use sgvi::param_space::build_param_grid;
use sgvi::problems::example1;
use sgvi::sg_system::{assemble_sg, ExplicitPolicy, SgOptions};

fn pools() -> Vec<usize> {
    let mut p = vec![1];
    let n = par::current_threads();
    if n > 1 {
        p.push(n);
    }
    p
}

fn kernels(c: &mut Criterion) {
    let problem = example1().unwrap();
    let mesh = build_uniform_mesh(problem.rect, 32, 32).unwrap();
    let grid = build_param_grid(&problem.densities, &[8, 8]).unwrap();
    let assemble = || {
        assemble_sg(
            &mesh,
            &grid,
            &problem.coefficient,
            &problem.source,
            &problem.obstacle,
            &problem.dirichlet,
            SgOptions::explicit(ExplicitPolicy::Never),
        )
        .unwrap()
    };
    let system = assemble();
    let v: Vec<f64> = (0..system.len()).map(|i| (i % 17) as f64 - 8.0).collect();
    let mc_mesh = build_uniform_mesh(problem.rect, 8, 8).unwrap();
    let mc_config = McConfig { n_samples: 512, ..Default::default() };

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for threads in pools() {
        group.bench_with_input(BenchmarkId::new("kron_matvec", threads), &threads, |b, &t| {
            par::with_threads(t, || b.iter(|| system.kron_matvec(&v).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("assemble_sg", threads), &threads, |b, &t| {
            par::with_threads(t, || b.iter(assemble))
        });
        group.bench_with_input(BenchmarkId::new("mc_512", threads), &threads, |b, &t| {
            par::with_threads(t, || {
                b.iter(|| {
                    mc_run(
                        &mc_mesh,
                        problem.dims(),
                        &problem.coefficient,
                        &problem.source,
                        &problem.obstacle,
                        &problem.dirichlet,
                        &mc_config,
                        &SolverConfig::psor(),
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
