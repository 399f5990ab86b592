use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gkdv_lab::evolve::{evolve, TrajectoryPoint};
use gkdv_lab::exec::Execution;
use gkdv_lab::harness::{make_initial_data, sweep, ExperimentConfig};
use gkdv_lab::modulation::{modulated_trajectory, ModulationOptions};
use gkdv_lab::{ground_state, GridSpec, GroundState};

fn grid() -> GridSpec {
    GridSpec::centered(60.0, 1024).unwrap()
}

fn trajectory(gs: &GroundState) -> Vec<TrajectoryPoint> {
    let cfg = ExperimentConfig {
        grid: grid(),
        t_max: 0.4,
        ..ExperimentConfig::instability(10)
    };
    let u0 = make_initial_data(10, gs).unwrap().u0;
    evolve(&u0, &cfg.evolver_config(u0.sup_norm()), &mut []).unwrap().points
}

fn modulation(c: &mut Criterion) {
    let gs = ground_state(5, 1.0, grid()).unwrap();
    let points = trajectory(&gs);
    let opts = ModulationOptions::default();
    let mut group = c.benchmark_group("modulated_trajectory");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::new(name, points.len()), &exec, |b, &exec| {
            b.iter(|| modulated_trajectory(&points, &gs, &opts, exec).unwrap())
        });
    }
    group.finish();
}

fn sweeps(c: &mut Criterion) {
    let configs: Vec<ExperimentConfig> = [10, 12, 14, 16]
        .into_iter()
        .map(|n| ExperimentConfig {
            grid: grid(),
            t_max: 0.1,
            ..ExperimentConfig::instability(n)
        })
        .collect();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for workers in [1, 4] {
        group.bench_with_input(BenchmarkId::new("workers", workers), &workers, |b, &w| {
            b.iter(|| sweep(&configs, w, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, modulation, sweeps);
criterion_main!(benches);
