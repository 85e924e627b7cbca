use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use klausmeier_spde::basis::{Boundary, SpectralBasis};
use klausmeier_spde::diagnostics::{ensemble_moments_with, HypothesisParams, MomentOrders};
use klausmeier_spde::dynamics::{ModelConfig, RecordSettings, SolverConfig, Stepper};
use klausmeier_spde::fixedpoint::{CutoffParams, Scenario};
use klausmeier_spde::noise::{ChannelSpec, NoiseSpec};
use klausmeier_spde::parallel::Execution;

fn ensemble(c: &mut Criterion) {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 15).unwrap();
    let mut model = ModelConfig::new(3.0);
    model.sigma1 = 0.5;
    model.sigma2 = 0.5;
    let spec = NoiseSpec::new(ChannelSpec::new(1.0, 0.3), ChannelSpec::new(1.0, 0.3));
    let stepper = Stepper::new(&basis, model, SolverConfig::new(2e-3, 0.1), &spec).unwrap();
    let scenario = Scenario {
        stepper: &stepper,
        u0: basis.sample(|x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos()),
        v0: basis.sample(|x| 0.5 + 0.25 * (2.0 * PI * x[0]).sin()),
        settings: RecordSettings {
            rho: 0.4,
            cutoff: CutoffParams::new(1e6, 3.0, 6.0, 12.0, 8.0).unwrap(),
        },
        seed: 1,
    };
    let orders = MomentOrders::from_hypothesis(&HypothesisParams::feasible_d1(), 1.0);

    let mut group = c.benchmark_group("ensemble_100_paths");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| ensemble_moments_with(exec, black_box(&scenario), &orders, 100).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
