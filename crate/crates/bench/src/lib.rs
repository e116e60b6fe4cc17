//! Criterion benchmarks for the filter step, the projection and a full
//! vehicle run. Driven from `benches/filter.rs`.

use std::hint::black_box;

use care_core::harness::{
    build_constraints, simulate, ScenarioConfig, VehicleModel, VehicleParams,
};
use care_core::{care_step, project, DMatrix, DVector, EstimatorState, FixedConstraints, Mode};
use criterion::Criterion;

fn step(c: &mut Criterion) {
    let params = VehicleParams::default();
    let model = VehicleModel::at_velocity(10.0, &params);
    let u = DVector::zeros(2);
    let (attack, state) = build_constraints(&u, &params);
    let constraints = FixedConstraints { attack, state };
    let prev = EstimatorState::new(
        DVector::from_vec(vec![19.9, 4.9, 0.05, 10.0]),
        DMatrix::identity(4, 4) * 0.01,
    );
    // Outside the box on x and y so the state projection is active.
    let y = DVector::from_vec(vec![20.4, 5.3, 0.05, 10.2]);

    let mut group = c.benchmark_group("care_step");
    for (name, mode) in [
        ("constrained", Mode::Care),
        ("unconstrained", Mode::Unconstrained),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| {
                care_step(
                    black_box(&prev),
                    &model,
                    &constraints,
                    &u,
                    black_box(&y),
                    mode,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    #[rustfmt::skip]
    let w = DMatrix::from_row_slice(4, 4, &[
        2.0, 0.3, 0.0, 0.1,
        0.3, 1.0, 0.2, 0.0,
        0.0, 0.2, 1.5, 0.0,
        0.1, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(6, 4, &[
        1.0, 0.0, 0.0, 0.0,
        -1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, -1.0, 0.0, 0.0,
        0.5, 0.5, 0.0, 1.0,
        0.0, 0.0, 1.0, -1.0,
    ]);
    let b = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.5]);
    let mut group = c.benchmark_group("project");
    for (name, e) in [
        ("interior", DVector::from_vec(vec![0.1, 0.1, 0.1, 0.1])),
        ("corner", DVector::from_vec(vec![3.0, 2.5, 2.0, -1.0])),
    ] {
        group.bench_function(name, |bench| {
            bench.iter(|| project(black_box(&e), &w, &a, &b).unwrap())
        });
    }
    group.finish();
}

fn vehicle_run(c: &mut Criterion) {
    let config = ScenarioConfig::default();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    group.bench_function("vehicle_1000_steps", |b| {
        b.iter(|| simulate(black_box(&config)).unwrap())
    });
    group.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    step(c);
    projection(c);
    vehicle_run(c);
}
