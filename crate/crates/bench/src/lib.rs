//! Benchmark bodies, kept in a library so the bench target stays a two-liner.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use frameless_core::{
    estimate_pmf_and_per, optimize_access_probability, run_exact, simulate_unresolved,
    ApproxCurves, BetaGrid, ExactOptions, FeedbackPolicy, RestartState, SlotType, SystemConfig,
};

pub fn benchmarks(c: &mut Criterion) {
    exact(c);
    approx(c);
    simulation(c);
    optimizer(c);
}

fn exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact");
    group.sample_size(10);
    for n in [25usize, 50] {
        let cfg = SystemConfig::single(n, (1.2 * n as f64) as usize, 2.68).unwrap();
        let spectra = cfg.spectra();
        group.bench_with_input(BenchmarkId::new("single_type", n), &n, |b, _| {
            b.iter(|| run_exact(black_box(&cfg), &spectra, &ExactOptions::default()).unwrap().per)
        });
    }
    let two = SystemConfig::new(30, vec![SlotType::new(30, 3.0), SlotType::new(6, 5.0)]).unwrap();
    let spectra = two.spectra();
    let pruned = ExactOptions {
        prune_eps: 1e-12,
        ..ExactOptions::default()
    };
    group.bench_function("two_types_30_pruned", |b| {
        b.iter(|| run_exact(black_box(&two), &spectra, &pruned).unwrap().per)
    });
    group.finish();
}

fn approx(c: &mut Criterion) {
    let cfg = SystemConfig::new(1000, vec![SlotType::new(950, 2.5), SlotType::new(950, 3.0)]).unwrap();
    c.bench_function("approx/fit_and_estimate_1000", |b| {
        b.iter(|| {
            let curves = ApproxCurves::fit(black_box(&cfg), &cfg.spectra()).unwrap();
            estimate_pmf_and_per(&curves).per
        })
    });
}

fn simulation(c: &mut Criterion) {
    let cfg = SystemConfig::single(100, 120, 2.68).unwrap();
    c.bench_function("sim/100_trials_n100", |b| {
        b.iter(|| simulate_unresolved(black_box(&cfg), 100, 11))
    });
}

fn optimizer(c: &mut Criterion) {
    let policy = FeedbackPolicy::new(10, 100, BetaGrid::default()).unwrap();
    // 50 users, 38 still unresolved after a first subperiod of 10 slots.
    let state = RestartState::new(50, 38, vec![7], vec![SlotType::new(10, 3.0)], SlotType::new(90, 3.0)).unwrap();
    c.bench_function("feedback/grid_search_after_one_subperiod", |b| {
        b.iter(|| optimize_access_probability(black_box(&state), &policy).unwrap())
    });
}
