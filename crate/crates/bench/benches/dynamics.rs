use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pbchaos::ensemble::{evolve_ensemble, CssSpec, NoiseModel};
use pbchaos::orbits::{find_periodic_orbit, DEFAULT_NEWTON_TOL};
use pbchaos::poincare::stroboscopic_map;
use pbchaos::quantum::{css_state, evolve_quantum, PhysParams, QuantumConfig};
use pbchaos::{propagate, IntegratorConfig};
use pbchaos_bench::{driven, start};

fn bench_dynamics(c: &mut Criterion) {
    let p = driven();
    let s = start();
    let t = p.period();

    c.bench_function("propagate_10_periods", |b| {
        let cfg = IntegratorConfig::default();
        b.iter(|| propagate(black_box(&p), black_box(&s), (0.0, 10.0 * t), &cfg).unwrap())
    });

    c.bench_function("stroboscopic_map_1", |b| {
        b.iter(|| stroboscopic_map(black_box(&p), black_box(&s), 1, 0.0).unwrap())
    });

    c.bench_function("newton_period_2", |b| {
        b.iter(|| find_periodic_orbit(black_box(&p), &s, 2, 0.0, DEFAULT_NEWTON_TOL))
    });

    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    group.bench_function("css_1000_samples_3T", |b| {
        let css = CssSpec::new(s, 700, 1000, 7);
        let noise = NoiseModel::default();
        b.iter(|| evolve_ensemble(&p, &css, &noise, &[0.0, 3.0 * t]).unwrap())
    });
    group.finish();

    let mut group = c.benchmark_group("quantum");
    group.sample_size(10);
    group.bench_function("n700_one_period", |b| {
        let phys = PhysParams::from_system(&p);
        let psi = css_state(p.n_atoms as usize, s.z, s.phi).unwrap();
        let cfg = QuantumConfig {
            dt_max: None,
            check_halving: false,
        };
        b.iter(|| evolve_quantum(&psi, &phys, &[t], &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_dynamics);
criterion_main!(benches);
