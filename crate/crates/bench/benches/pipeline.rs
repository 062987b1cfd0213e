use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sef_core::pipeline::analyze_election;
use sef_core::rigging::{default_p_grid, distance_curve, thompson_tau};
use sef_core::sef::{
    remove_ellipse_outliers, sef_histogram, smooth_histogram, ZScoreOptions, DEFAULT_BINS, DEFAULT_RANGE,
};
use sef_core::{compute_zscores, generate_synthetic, run_ensemble, Election, RiggingSpec, SynthSpec, TestConfig};

fn election(seed: u64, rigged: bool) -> Election {
    generate_synthetic(&SynthSpec {
        name: format!("e{seed:02}"),
        seed,
        rigging: rigged.then(RiggingSpec::standard),
        ..Default::default()
    })
    .expect("default spec passes the gates")
}

fn stages(c: &mut Criterion) {
    let e = election(1, false);
    let z = compute_zscores(&e, ZScoreOptions::default()).pairs;
    let hist = sef_histogram(&z, DEFAULT_BINS, DEFAULT_RANGE).unwrap();
    let grid = default_p_grid();

    c.bench_function("zscores_leave_one_out", |b| {
        b.iter(|| compute_zscores(black_box(&e), ZScoreOptions::default()))
    });
    c.bench_function("ellipse_removal", |b| {
        b.iter(|| remove_ellipse_outliers(black_box(&z), 0.95))
    });
    c.bench_function("smooth_100x100", |b| b.iter(|| smooth_histogram(black_box(&hist))));
    c.bench_function("distance_curve_180p", |b| {
        b.iter(|| distance_curve("e", black_box(&z), &grid))
    });
    c.bench_function("analyze_election", |b| {
        b.iter(|| analyze_election(black_box(&e), &TestConfig::default()))
    });

    let distances: Vec<f64> = (0..21).map(|k| 0.1 + 0.01 * k as f64).chain([1.5]).collect();
    c.bench_function("thompson_tau_22", |b| {
        b.iter(|| thompson_tau(black_box(&distances), 0.05))
    });
}

fn ensemble(c: &mut Criterion) {
    let elections: Vec<Election> = (0..21).map(|k| election(100 + k, k == 20)).collect();
    let cfg = TestConfig::default();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(20);
    group.bench_function("run_ensemble_21", |b| {
        b.iter_batched(
            || elections.clone(),
            |es| run_ensemble(&es, &cfg),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, stages, ensemble);
criterion_main!(benches);
