use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phi4_bench::gff_field;
use phi4_core::besov::NormEngine;
use phi4_core::dynamics::{DpdState, DpdStepper, LangevinStepper};
use phi4_core::gaussian::{OuState, OuStepper};
use phi4_core::noise::sample_slab;
use phi4_core::{InitialSplit, Laplacian, Region, RngPolicy, Scheme, SimConfig, TorusGrid};

const SIZES: [usize; 3] = [32, 64, 128];

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft_roundtrip");
    for n in SIZES {
        let (_, f) = gff_field(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| f.to_spectral().to_real())
        });
    }
    group.finish();
}

fn ou_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("ou_step");
    for n in SIZES {
        let (g, _) = gff_field(n);
        let stepper = OuStepper::new(&g, 0.01).unwrap();
        let noise = sample_slab(&RngPolicy::new(2), &g, 0.01, 1, 0)
            .unwrap()
            .increments;
        let mut state = OuState::zero(&g);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| stepper.step(&mut state, &noise).unwrap())
        });
    }
    group.finish();
}

fn dpd_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("dpd_step");
    for n in SIZES {
        let (g, f) = gff_field(n);
        let cfg = SimConfig::new(&g, 1.0, 1.0, 0.01, 1.0, Scheme::DpdExponential, 3).unwrap();
        let stepper = DpdStepper::new(&cfg).unwrap();
        let noise = sample_slab(&cfg.policy, &g, 0.01, 1, 0).unwrap().increments;
        let mut state = DpdState::new(&f.scale(0.1), InitialSplit::OuCarries);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| stepper.step(&mut state, &noise).unwrap())
        });
    }
    group.finish();
}

fn langevin_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("langevin_step");
    for n in SIZES {
        let g = TorusGrid::with_laplacian(4.0, n, Laplacian::FiniteDifference).unwrap();
        let cfg = SimConfig::new(&g, 1.0, 1.0, 0.01, 1.0, Scheme::LangevinExponential, 3).unwrap();
        let stepper = LangevinStepper::new(&cfg).unwrap();
        let noise = sample_slab(&cfg.policy, &g, 0.01, 1, 0).unwrap().increments;
        let mut phi = noise.scale(0.0);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| stepper.step(&mut phi, &noise, 0.0).unwrap())
        });
    }
    group.finish();
}

fn besov_norm(c: &mut Criterion) {
    let mut group = c.benchmark_group("neg_besov_norm");
    group.sample_size(20);
    for n in [64, 128] {
        let (g, f) = gff_field(n);
        let engine = NormEngine::new(&g, Default::default(), None).unwrap();
        let region = Region::unweighted();
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| engine.neg_norm(&f, 0.3, &region).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fft, ou_step, dpd_step, langevin_step, besov_norm);
criterion_main!(benches);
