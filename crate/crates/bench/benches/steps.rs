use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nrl_core::integrators::{em_step, mala_step, strang_step, ChainState, RngStream};
use nrl_core::perturbations::{block_circulant_j1, rotation_2d, Drift, Perturbation};
use nrl_core::targets::{dimer_solvent, warped_gaussian, DimerParams};

fn warped_steps(c: &mut Criterion) {
    let target = warped_gaussian(0.1).unwrap();
    let perturbation = Perturbation::linear(rotation_2d(), 10.0);
    let drift = Drift::new(&target, &perturbation);
    let start = [0.0, 5.0];
    let dt = 1e-3;
    let mut group = c.benchmark_group("warped_gaussian");

    group.bench_function("em", |b| {
        let mut state = ChainState::new(&target, &start).unwrap();
        let mut rng = RngStream::new(1, 0);
        b.iter(|| em_step(&mut state, &drift, black_box(dt), &mut rng).unwrap());
    });
    group.bench_function("mala", |b| {
        let mut state = ChainState::new(&target, &start).unwrap();
        let mut rng = RngStream::new(1, 1);
        b.iter(|| mala_step(&mut state, &target, black_box(dt), &mut rng, None).unwrap());
    });
    group.bench_function("mala_nonrev_proposal", |b| {
        let mut state = ChainState::new(&target, &start).unwrap();
        let mut rng = RngStream::new(1, 2);
        b.iter(|| mala_step(&mut state, &target, black_box(dt), &mut rng, Some(&perturbation)).unwrap());
    });
    group.bench_function("strang", |b| {
        let mut state = ChainState::new(&target, &start).unwrap();
        let mut rng = RngStream::new(1, 3);
        b.iter(|| strang_step(&mut state, &target, &perturbation, black_box(dt), &mut rng).unwrap());
    });
    group.finish();
}

fn dimer(c: &mut Criterion) {
    let mut group = c.benchmark_group("dimer_solvent");
    for n in [8, 16, 32] {
        let params = DimerParams {
            n_particles: n,
            box_length: 6.0 * (n as f64 / 8.0).sqrt(),
            ..DimerParams::default()
        };
        let target = dimer_solvent(params, 1.0).unwrap();
        let x = params.lattice_configuration();
        let mut grad = vec![0.0; x.len()];
        group.bench_with_input(BenchmarkId::new("energy_and_gradient", n), &x, |b, x| {
            b.iter(|| target.energy_and_gradient(black_box(x), &mut grad).unwrap());
        });

        let perturbation = Perturbation::linear(block_circulant_j1(n).unwrap(), 10.0);
        let drift = Drift::new(&target, &perturbation);
        group.bench_with_input(BenchmarkId::new("em", n), &x, |b, x| {
            let mut state = ChainState::new(&target, x).unwrap();
            let mut rng = RngStream::new(2, n as u64);
            b.iter(|| em_step(&mut state, &drift, black_box(1e-5), &mut rng).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, warped_steps, dimer);
criterion_main!(benches);
