use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use meson_bench::{params, random_state, synthetic_series};
use meson_core::edsolver::{assemble_sector_hamiltonian, build_zero_momentum_basis};
use meson_core::spectro::{power_spectrum, Window};
use meson_core::trotter::build_step;
use meson_core::Gate;

fn gates(c: &mut Criterion) {
    let mut group = c.benchmark_group("gate");
    for n in [12, 16, 20] {
        let mut state = random_state(n);
        let field = Gate::field_rotation(n / 2, 0.5, 0.3, 0.4);
        let xx = Gate::xx_rotation(n / 2, n / 2 + 1, 0.4);
        group.bench_with_input(BenchmarkId::new("field_rotation", n), &n, |b, _| {
            b.iter(|| state.apply_gate(black_box(&field)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("xx_rotation", n), &n, |b, _| {
            b.iter(|| state.apply_gate(black_box(&xx)).unwrap())
        });
    }
    group.finish();
}

fn trotter_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("trotter_step");
    group.sample_size(20);
    for n in [12, 16] {
        let step = build_step(&params(n), 0.4).unwrap();
        let mut state = random_state(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| state.apply_gates(&step.gates).unwrap())
        });
    }
    group.finish();
}

fn sector_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("sector_assembly");
    group.sample_size(10);
    for n in [12, 16] {
        let p = params(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                let basis = build_zero_momentum_basis(n).unwrap();
                assemble_sector_hamiltonian(black_box(&p), &basis).unwrap()
            })
        });
    }
    group.finish();
}

fn spectrum(c: &mut Criterion) {
    let series = synthetic_series(101, 0.4);
    c.bench_function("power_spectrum/101x8", |b| {
        b.iter(|| power_spectrum(black_box(&series), Window::Hann, 8).unwrap())
    });
}

criterion_group!(benches, gates, trotter_step, sector_assembly, spectrum);
criterion_main!(benches);
