use super::*;
use crate::basis::{Boundary, SpectralBasis};
use crate::dynamics::{simulate_path, ModelConfig, SolverConfig};
use crate::noise::{ChannelSpec, NoiseSpec};
use std::f64::consts::PI;

fn spec() -> NoiseSpec {
    NoiseSpec::new(ChannelSpec::new(1.0, 0.3), ChannelSpec::new(1.0, 0.3))
}

fn model() -> ModelConfig {
    let mut m = ModelConfig::new(3.0);
    m.sigma1 = 0.5;
    m.sigma2 = 0.5;
    m
}

fn settings(kappa: f64) -> RecordSettings {
    RecordSettings {
        rho: 0.4,
        cutoff: CutoffParams::new(kappa, 3.0, 6.0, 12.0, 8.0).unwrap(),
    }
}

fn small_data(basis: &SpectralBasis) -> (Field, Field) {
    (
        basis.sample(|x| 0.1 * (1.0 + (2.0 * PI * x[0]).cos()) / 2.0),
        basis.sample(|x| 0.05 + 0.05 * (2.0 * PI * x[0]).sin().powi(2)),
    )
}

fn large_data(basis: &SpectralBasis) -> (Field, Field) {
    (
        basis.sample(|x| 2.0 + (2.0 * PI * x[0]).cos()),
        basis.sample(|x| 3.0 + (2.0 * PI * x[0]).sin()),
    )
}

#[test]
fn zero_pair_gives_the_reaction_free_flow() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.2), &spec()).unwrap();
    let (u0, v0) = small_data(&basis);
    let noise = NoisePath::generate(NoiseKey::new(1), basis.len(), 0.01, 20);
    let zero = FrozenPair::zero(0.01, 20, &u0);
    let t = apply_V(&s, &zero, &u0, &v0, 1.0, &noise, &settings(1.0)).unwrap();
    let mut state = CoupledState::new(u0.clone(), v0.clone());
    let z = basis.zeros();
    for n in 0..20 {
        let w1 = s.noise().increment_field(&basis, &noise, 1, n);
        let w2 = s.noise().increment_field(&basis, &noise, 2, n);
        let u = s.pm_implicit_step(&state.u, &z, &w1, 0.01).unwrap();
        let v = s.heat_step(&state.v, &z, &w2, 0.01, 0.0).unwrap();
        state = CoupledState {
            u,
            v,
            t: state.t + 0.01,
        };
        assert_eq!(t.states[n + 1].u, state.u);
        assert_eq!(t.states[n + 1].v, state.v);
    }
    let again = apply_V(&s, &zero, &u0, &v0, 1.0, &noise, &settings(1.0)).unwrap();
    assert_eq!(t, again);
}

#[test]
fn tiny_level_switches_the_reaction_off() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.3), &spec()).unwrap();
    let (u0, v0) = large_data(&basis);
    let noise = NoisePath::generate(NoiseKey::new(2), basis.len(), 0.01, 30);
    let pair = simulate_path(&s, &u0, &v0, &noise, PathMode::Coupled, &settings(1.0))
        .unwrap()
        .as_pair();
    let kappa = 1e-3;
    let h = pair.h_series(&settings(kappa).cutoff);
    let off = h.iter().position(|x| *x >= 2.0 * kappa).unwrap();
    assert!(off <= 2);
    let t = apply_V(&s, &pair, &u0, &v0, kappa, &noise, &settings(kappa)).unwrap();
    let zero = FrozenPair::zero(0.01, 30, &u0);
    let tail = apply_v_from(
        &s,
        &zero,
        t.states[off].clone(),
        kappa,
        &noise.tail(off),
        &settings(kappa),
    )
    .unwrap();
    for (a, b) in t.states[off..].iter().zip(&tail.states) {
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
    }
}

#[test]
fn picard_on_zero_data_converges_at_once() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.1), &spec()).unwrap();
    let z = basis.zeros();
    let noise = NoisePath::generate(NoiseKey::new(3), basis.len(), 0.01, 10);
    for initial in [InitialIterate::Zero, InitialIterate::ZeroReaction] {
        let settings_p = PicardSettings {
            initial,
            ..PicardSettings::default()
        };
        let r = picard_solve(&s, &z, &z, 1.0, &noise, &settings(1.0), &settings_p).unwrap();
        assert_eq!(r.iterations(), 1);
        assert_eq!(r.final_residual(), 0.0);
    }
}

#[test]
fn picard_small_data_contracts_to_a_fixed_point() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 64, 15).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(1e-3, 0.1), &spec()).unwrap();
    let (u0, v0) = small_data(&basis);
    let noise = NoisePath::generate(NoiseKey::new(4), basis.len(), 1e-3, 100);
    let rec = settings(1.0);
    let r = picard_solve(&s, &u0, &v0, 1.0, &noise, &rec, &PicardSettings::default()).unwrap();
    assert!(r.final_residual() <= 1e-8);
    assert!(
        r.residuals.windows(2).skip(1).all(|w| w[1] < w[0]),
        "{:?}",
        r.residuals
    );

    let again = apply_V(&s, &r.trajectory.as_pair(), &u0, &v0, 1.0, &noise, &rec).unwrap();
    assert!(m_norm_distance(&again.as_pair(), &r.trajectory.as_pair(), &rec.cutoff) <= 1e-8);

    let restart = PicardSettings {
        initial: InitialIterate::Given(r.trajectory.as_pair()),
        ..PicardSettings::default()
    };
    let r2 = picard_solve(&s, &u0, &v0, 1.0, &noise, &rec, &restart).unwrap();
    assert_eq!(r2.iterations(), 1);
    assert!(r2.residuals[0] <= 1e-8);

    // below the level the truncated system is the system itself
    let direct = simulate_path(&s, &u0, &v0, &noise, PathMode::Coupled, &rec).unwrap();
    assert!(direct.norms.iter().all(|n| n.h < 1.0));
    let worst = direct
        .states
        .iter()
        .zip(&r.trajectory.states)
        .map(|(a, b)| {
            a.u.zip_map(&b.u, |x, y| x - y).l2_norm() + a.v.zip_map(&b.v, |x, y| x - y).l2_norm()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-7, "{worst}");
}

#[test]
fn picard_fixed_point_is_the_direct_truncated_solution() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.2), &spec()).unwrap();
    let (u0, v0) = large_data(&basis);
    let noise = NoisePath::generate(NoiseKey::new(5), basis.len(), 0.01, 20);
    let rec = settings(1.0);
    let kappa = 1.0;
    let picard = PicardSettings {
        tol: 1e-12,
        max_iter: 30,
        initial: InitialIterate::ZeroReaction,
    };
    let r = picard_solve(&s, &u0, &v0, kappa, &noise, &rec, &picard).unwrap();
    // the map is causal, so exact agreement is reached after at most steps + 1 iterations
    assert!(r.iterations() <= 21);
    let direct = simulate_path(&s, &u0, &v0, &noise, PathMode::Truncated { kappa }, &rec).unwrap();
    assert!(direct.norms.iter().any(|n| n.h >= 2.0 * kappa));
    for (a, b) in direct.states.iter().zip(&r.trajectory.states) {
        assert!(a.u.max_abs_diff(&b.u) <= 1e-10 && a.v.max_abs_diff(&b.v) <= 1e-10);
    }
}

#[test]
fn picard_reports_non_convergence() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.2), &spec()).unwrap();
    let (u0, v0) = large_data(&basis);
    let noise = NoisePath::generate(NoiseKey::new(5), basis.len(), 0.01, 20);
    let picard = PicardSettings {
        tol: 1e-14,
        max_iter: 2,
        initial: InitialIterate::Zero,
    };
    match picard_solve(&s, &u0, &v0, 10.0, &noise, &settings(10.0), &picard) {
        Err(Error::PicardNonConvergence {
            iterations,
            residuals,
            ..
        }) => {
            assert_eq!(iterations, 2);
            assert_eq!(residuals.len(), 2);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
    let bad = PicardSettings {
        tol: 0.0,
        ..PicardSettings::default()
    };
    assert!(picard_solve(&s, &u0, &v0, 1.0, &noise, &settings(1.0), &bad).is_err());
}

#[test]
fn exit_time_examples() {
    let basis = SpectralBasis::new(1, Boundary::Neumann, 16, 4).unwrap();
    let mut m = ModelConfig::new(3.0);
    m.r_u = 0.0;
    m.r_v = 0.0;
    m.chi = 0.0;
    let silent = NoiseSpec::new(ChannelSpec::silent(), ChannelSpec::silent());
    let s = Stepper::new(&basis, m, SolverConfig::new(0.01, 1.0), &silent).unwrap();
    let noise = NoisePath::zero(basis.len(), 0.01, 100);
    let rec = settings(1.0);
    let z = basis.zeros();
    let t = simulate_path(&s, &z, &z, &noise, PathMode::Coupled, &rec).unwrap();
    assert_eq!(first_exit_time(&t, 1e-12).unwrap(), None);

    // constant fields stay constant; the reaction moves v but with χ = 0 not u
    let (a, b): (f64, f64) = (0.8, 0.0);
    let u0 = Field::constant(1, 16, a);
    let t = simulate_path(
        &s,
        &u0,
        &Field::constant(1, 16, b),
        &noise,
        PathMode::Coupled,
        &rec,
    )
    .unwrap();
    let p = rec.cutoff;
    let kappa: f64 = 0.6;
    // h(t) = (t a^{γ+1})^ν for b = 0
    let t_star = (kappa.powf(1.0 / p.nu)) / a.powf(p.gamma + 1.0);
    let hit = first_exit_time(&t, kappa).unwrap().unwrap();
    assert!(
        hit >= t_star && hit < t_star + 0.01 + 1e-12,
        "{hit} vs {t_star}"
    );

    assert_eq!(first_exit_time(&t, 1e-9).unwrap(), Some(t.norms[1].t));
    assert!(first_exit_time(&t, 0.0).is_err());
    let mut broken = t.clone();
    broken.norms.clear();
    assert!(first_exit_time(&broken, 1.0).is_err());
}

#[test]
fn glue_small_data_is_one_picard_segment() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.2), &spec()).unwrap();
    let (u0, v0) = small_data(&basis);
    let rec = settings(1.0);
    let key = NoiseKey::new(6);
    let g = glue_simulate(
        &s,
        &u0,
        &v0,
        &[1.0, 2.0],
        key,
        &rec,
        &PicardSettings::default(),
    )
    .unwrap();
    assert_eq!(g.rungs.len(), 1);
    assert_eq!(g.rungs[0].exit_time, None);
    assert_eq!(g.tail_start, None);
    let noise = NoisePath::generate(key.with_rung(0), basis.len(), 0.01, 20);
    let p = picard_solve(&s, &u0, &v0, 1.0, &noise, &rec, &PicardSettings::default()).unwrap();
    assert_eq!(g.trajectory, p.trajectory);
}

#[test]
fn glue_forced_exit_continues_with_decoupled_tail() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.3), &spec()).unwrap();
    let (u0, v0) = large_data(&basis);
    let rec = settings(1.0);
    let key = NoiseKey::new(7);
    let g = glue_simulate(&s, &u0, &v0, &[1.0], key, &rec, &PicardSettings::default()).unwrap();
    assert_eq!(g.rungs.len(), 1);
    let exit = g.rungs[0].exit_time.expect("large data exits");
    assert_eq!(g.tail_start, Some(exit));
    assert_eq!(g.junctions.len(), 2);
    assert_eq!(g.trajectory.states.len(), 31);
    let j = g.junctions[1];
    assert_eq!(g.trajectory.states[j].t, exit);

    // the tail is the decoupled system driven by the next rung's noise
    let noise = NoisePath::generate(key.with_rung(1), basis.len(), 0.01, 30 - j);
    let start = &g.trajectory.states[j];
    let tail = simulate_path(&s, &start.u, &start.v, &noise, PathMode::Decoupled, &rec).unwrap();
    for (a, b) in g.trajectory.states[j..].iter().zip(&tail.states) {
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
    }
    // segments hand over the exact state
    let noise0 = NoisePath::generate(key.with_rung(0), basis.len(), 0.01, 30);
    let p = picard_solve(&s, &u0, &v0, 1.0, &noise0, &rec, &PicardSettings::default()).unwrap();
    assert_eq!(p.trajectory.states[j].u, g.trajectory.states[j].u);
    assert_eq!(p.trajectory.states[j].v, g.trajectory.states[j].v);
}

#[test]
fn glue_multi_rung_and_degenerate_cases() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 32, 9).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.3), &spec()).unwrap();
    let (u0, v0) = large_data(&basis);
    let rec = settings(1.0);
    let g = glue_simulate(
        &s,
        &u0,
        &v0,
        &[0.5, 1.0, 2.0],
        NoiseKey::new(8),
        &rec,
        &PicardSettings::default(),
    )
    .unwrap();
    assert!(g.rungs.len() >= 2);
    let times: Vec<f64> = g.trajectory.times().collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(g.trajectory.states.len(), 31);
    for w in g.rungs.windows(2) {
        assert_eq!(Some(w[1].start_time), w[0].exit_time);
    }
    assert!(glue_simulate(
        &s,
        &u0,
        &v0,
        &[2.0, 1.0],
        NoiseKey::new(8),
        &rec,
        &PicardSettings::default()
    )
    .is_err());

    let s0 = Stepper::new(&basis, model(), SolverConfig::new(0.01, 0.0), &spec()).unwrap();
    let g = glue_simulate(
        &s0,
        &u0,
        &v0,
        &[1.0],
        NoiseKey::new(8),
        &rec,
        &PicardSettings::default(),
    )
    .unwrap();
    assert_eq!(g.trajectory.states.len(), 1);
    assert!(g.rungs.is_empty());
}

fn exit_scenario<'s, 'b>(
    s: &'s Stepper<'b>,
    basis: &SpectralBasis,
    scale: f64,
) -> Scenario<'s, 'b> {
    let (u0, v0) = large_data(basis);
    Scenario {
        stepper: s,
        u0: u0.map(|x| x * scale),
        v0: v0.map(|x| x * scale),
        settings: settings(1.0),
        seed: 9,
    }
}

#[test]
fn exit_probability_limits_and_monotonicity() {
    let basis = SpectralBasis::new(1, Boundary::Periodic, 16, 5).unwrap();
    let s = Stepper::new(&basis, model(), SolverConfig::new(0.02, 0.2), &spec()).unwrap();
    let sc = exit_scenario(&s, &basis, 0.5);
    let est = exit_prob_estimate(&sc, &[1e-6, 0.5, 1.0, 2.0, 1e6], 100).unwrap();
    assert_eq!(est[0].p_hat, 1.0);
    assert_eq!(est[4].p_hat, 0.0);
    for w in est.windows(2) {
        assert!(w[1].p_hat <= w[0].p_hat + 2.0 * (w[0].std_error + w[1].std_error));
    }
    assert!(exit_prob_estimate(&sc, &[1.0], 99).is_err());
    assert!(exit_prob_estimate(&sc, &[0.0], 100).is_err());
    // same seed, same answer
    assert_eq!(
        est,
        exit_prob_estimate(&sc, &[1e-6, 0.5, 1.0, 2.0, 1e6], 100).unwrap()
    );
}

#[test]
fn tail_fits() {
    let mk = |kappa: f64, p_hat: f64| ExitEstimate {
        kappa,
        p_hat,
        std_error: 0.0,
        n_paths: 100,
    };
    let est = [mk(1.0, 0.5), mk(2.0, 0.3), mk(4.0, 0.1)];
    let fit = fit_tail(&est);
    assert!((fit.envelope - 0.6).abs() < 1e-15);
    assert!(est.iter().all(|e| fit.envelope / e.kappa >= e.p_hat));
    let exact = [mk(1.0, 0.8), mk(2.0, 0.4), mk(4.0, 0.2)];
    assert!((fit_tail(&exact).least_squares - 0.8).abs() < 1e-12);
    assert_eq!(exit_ladder(3.7), vec![1.0, 2.0, 3.0]);
    assert_eq!(exit_ladder(0.25), vec![0.25]);
}
