use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use notif_ltv_bench::{calibration_pairs, full_model, sim_config};
use notif_ltv_core::calibrate::fit_isotonic;
use notif_ltv_core::sim::run_experiment;
use notif_ltv_core::solver::solve_policy;
use notif_ltv_core::{CalibrationMap, HeuristicThresholds, Policy, SolverConfig, Treatment};

fn solver(c: &mut Criterion) {
    let model = full_model();
    let mut group = c.benchmark_group("solve_policy");
    for horizon in [50, 250] {
        let cfg = SolverConfig {
            horizon,
            ..SolverConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(horizon), &cfg, |b, cfg| {
            b.iter(|| solve_policy(black_box(&model), cfg).unwrap())
        });
    }
    group.finish();
}

fn isotonic(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_isotonic");
    for n in [1_000, 100_000] {
        let pairs = calibration_pairs(n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pairs, |b, pairs| {
            b.iter(|| fit_isotonic(black_box(pairs), None).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let cfg = sim_config(1_000, 10);
    let table = solve_policy(&full_model(), &SolverConfig::default()).unwrap();
    let treatments = [
        Treatment {
            name: "heuristic".into(),
            policy: Policy::Heuristic(HeuristicThresholds::uniform(0.005).unwrap()),
            limit_adjustment: 0,
            baseline: true,
        },
        Treatment {
            name: "rl".into(),
            policy: Policy::Rl(table),
            limit_adjustment: 0,
            baseline: false,
        },
    ];
    let calibration = CalibrationMap::identity();
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("1000_users_10_days", |b| {
        b.iter(|| run_experiment(black_box(&cfg), &calibration, &treatments).unwrap())
    });
    group.finish();
}

criterion_group!(benches, solver, isotonic, simulation);
criterion_main!(benches);
