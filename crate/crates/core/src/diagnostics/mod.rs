//! Hypothesis checks, energy and nonnegativity monitors, Monte-Carlo moment
//! estimates and the pathwise-uniqueness experiment.

mod hypothesis;

pub use hypothesis::{
    validate_hypotheses, Clause, ClauseGroup, HypothesisParams, HypothesisReport,
};

use serde::Serialize;

use crate::dynamics::{simulate_path, PathMode, Stepper, Trajectory, NON_FINITE_STATE};
use crate::error::{invalid, Error, Result};
use crate::field::{lp_power_sum, sobolev_norm, Field};
use crate::fixedpoint::{picard_solve, InitialIterate, PicardSettings, Scenario};
use crate::noise::{NoiseKey, NoisePath};
use crate::parallel::{map_indexed_with, Execution};
use crate::stats::Estimate;

/// Grid values below this count as sign violations.
pub const NEGATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    /// `|u(t)|^{p+1}_{L^{p+1}}`.
    pub lp_power: f64,
    /// Running supremum of `lp_power`.
    pub sup_term: f64,
    /// `∫₀ᵗ∫ |u|^{p+γ−2} |∇u|²`.
    pub dissipation: f64,
    /// `χ ∫₀ᵗ∫ |u|^{p+1} v²`.
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub p: f64,
    pub rows: Vec<EnergyRow>,
    /// `γ p (p+1) r_u`.
    pub dissipation_weight: f64,
    /// `p + 1`.
    pub coupling_weight: f64,
}

impl EnergyLedger {
    pub fn last(&self) -> &EnergyRow {
        self.rows.last().expect("ledger has the initial row")
    }

    /// Left-hand side of the moment bound along this path.
    pub fn bound_lhs(&self) -> f64 {
        let r = self.last();
        r.sup_term + self.dissipation_weight * r.dissipation + self.coupling_weight * r.coupling
    }

    pub fn is_finite(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.sup_term.is_finite() && r.dissipation.is_finite() && r.coupling.is_finite())
    }
}

fn check_full(trajectory: &Trajectory) -> Result<()> {
    let dt = trajectory.dt;
    if trajectory.states.is_empty() || trajectory.norms.len() != trajectory.states.len() {
        return Err(invalid("trajectory has no snapshots"));
    }
    if trajectory
        .states
        .windows(2)
        .any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1e-300))
    {
        return Err(invalid(
            "trajectory is missing snapshots (times are not one step apart)",
        ));
    }
    Ok(())
}

/// Accumulates the three quantities of the `L^{p+1}` moment bound along a
/// path. Time integrals use the left endpoint of every step.
pub fn energy_monitor(stepper: &Stepper, trajectory: &Trajectory, p: f64) -> Result<EnergyLedger> {
    if !(p >= 1.0) {
        return Err(invalid(format!(
            "moment order must be at least 1 (got {p})"
        )));
    }
    check_full(trajectory)?;
    let model = stepper.model();
    let boundary = stepper.basis().boundary();
    let dt = trajectory.dt;
    let q = p + 1.0;
    let w = p + model.gamma - 2.0;
    let mut rows = Vec::with_capacity(trajectory.states.len());
    let (mut sup, mut diss, mut coup) = (0.0f64, 0.0, 0.0);
    for (i, s) in trajectory.states.iter().enumerate() {
        let lp = lp_power_sum(&s.u, q);
        sup = sup.max(lp);
        rows.push(EnergyRow {
            t: s.t,
            lp_power: lp,
            sup_term: sup,
            dissipation: diss,
            coupling: coup,
        });
        if i + 1 < trajectory.states.len() {
            let g = s.u.gradient_squared(boundary);
            let vol = s.u.cell_volume();
            let d: f64 =
                s.u.values()
                    .iter()
                    .zip(g.values())
                    .map(|(u, g)| u.abs().powf(w) * g)
                    .sum();
            let c: f64 =
                s.u.values()
                    .iter()
                    .zip(s.v.values())
                    .map(|(u, v)| u.abs().powf(q) * v * v)
                    .sum();
            diss += dt * vol * d;
            coup += dt * vol * model.chi * c;
        }
    }
    Ok(EnergyLedger {
        p,
        rows,
        dissipation_weight: model.gamma * p * q * model.r_u,
        coupling_weight: q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonnegReport {
    pub min_u: Vec<f64>,
    pub min_v: Vec<f64>,
    pub worst_u: f64,
    pub worst_v: f64,
    /// Grid values of `u` or `v` below `−NEGATIVE_TOLERANCE`, summed over steps.
    pub below_tolerance: usize,
}

impl NonnegReport {
    pub fn holds(&self) -> bool {
        self.below_tolerance == 0
    }
}

pub fn nonneg_monitor(trajectory: &Trajectory) -> NonnegReport {
    let min_u: Vec<f64> = trajectory.states.iter().map(|s| s.u.min()).collect();
    let min_v: Vec<f64> = trajectory.states.iter().map(|s| s.v.min()).collect();
    let below = trajectory
        .states
        .iter()
        .flat_map(|s| s.u.values().iter().chain(s.v.values()))
        .filter(|x| **x < -NEGATIVE_TOLERANCE)
        .count();
    NonnegReport {
        worst_u: min_u.iter().copied().fold(f64::INFINITY, f64::min),
        worst_v: min_v.iter().copied().fold(f64::INFINITY, f64::min),
        min_u,
        min_v,
        below_tolerance: below,
    }
}

/// Exponents entering the moment statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentOrders {
    pub p: f64,
    pub rho: f64,
    pub m0: f64,
    pub l: f64,
}

impl MomentOrders {
    pub fn from_hypothesis(h: &HypothesisParams, p: f64) -> Self {
        Self {
            p,
            rho: h.rho,
            m0: h.m0,
            l: h.l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub orders: MomentOrders,
    pub n_paths: usize,
    /// `E sup_t |u|^{p+1}_{L^{p+1}}`.
    pub sup_u: Estimate,
    /// `E ∫∫ |u|^{p+γ−2} |∇u|²`.
    pub dissipation: Estimate,
    /// `E χ∫∫ |u|^{p+1} v²`.
    pub coupling: Estimate,
    /// `E sup_t |v|^{m₀}_{H^ρ}`.
    pub sup_v: Estimate,
    /// `E (∫ |v|²_{H^{ρ+1}})^{m₀/2}`.
    pub v_energy: Estimate,
    /// Path-wise left-hand side of the `u` bound over `|u₀|^{p+1}_{L^{p+1}} + 1`.
    pub c0: Estimate,
    /// Path-wise left-hand side of the `v` bound over
    /// `1 + |v₀|^{m₀}_{H^ρ} + |u₀|^l_{L²}`.
    pub c2: Estimate,
    pub worst_min_u: f64,
    pub worst_min_v: f64,
    pub below_tolerance: usize,
}

impl EnsembleReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("n_paths: {}\np: {}\n", self.n_paths, self.orders.p);
        for (name, e) in [
            ("sup_u", &self.sup_u),
            ("dissipation", &self.dissipation),
            ("coupling", &self.coupling),
            ("sup_v", &self.sup_v),
            ("v_energy", &self.v_energy),
            ("c0", &self.c0),
            ("c2", &self.c2),
        ] {
            s.push_str(&format!("{name}: {:.17e} +- {:.6e}\n", e.mean, e.std_error));
        }
        s.push_str(&format!(
            "worst_min_u: {:.17e}\nworst_min_v: {:.17e}\nbelow_tolerance: {}\n",
            self.worst_min_u, self.worst_min_v, self.below_tolerance
        ));
        s
    }
}

struct PathMoments {
    sup_u: f64,
    dissipation: f64,
    coupling: f64,
    sup_v: f64,
    v_energy: f64,
    c0: f64,
    c2: f64,
    worst_u: f64,
    worst_v: f64,
    below: usize,
}

impl PathMoments {
    fn is_finite(&self) -> bool {
        [
            self.sup_u,
            self.dissipation,
            self.coupling,
            self.sup_v,
            self.v_energy,
            self.c0,
            self.c2,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

fn path_moments(
    scenario: &Scenario,
    orders: &MomentOrders,
    traj: &Trajectory,
) -> Result<PathMoments> {
    let stepper = scenario.stepper;
    let full = stepper.full_basis();
    let ledger = energy_monitor(stepper, traj, orders.p)?;
    let nonneg = nonneg_monitor(traj);
    let dt = traj.dt;
    let mut sup_v = 0.0f64;
    let mut integral = 0.0;
    for (i, s) in traj.states.iter().enumerate() {
        sup_v = sup_v.max(sobolev_norm(full, &s.v, orders.rho)?.value.powf(orders.m0));
        if i + 1 < traj.states.len() {
            integral += dt * sobolev_norm(full, &s.v, orders.rho + 1.0)?.value.powi(2);
        }
    }
    let v_energy = integral.powf(orders.m0 / 2.0);
    let u0 = &scenario.u0;
    let c0_den = lp_power_sum(u0, orders.p + 1.0) + 1.0;
    let c2_den = 1.0
        + sobolev_norm(full, &scenario.v0, orders.rho)?
            .value
            .powf(orders.m0)
        + u0.l2_norm().powf(orders.l);
    let last = ledger.last();
    Ok(PathMoments {
        sup_u: last.sup_term,
        dissipation: last.dissipation,
        coupling: last.coupling,
        sup_v,
        v_energy,
        c0: ledger.bound_lhs() / c0_den,
        c2: (sup_v + v_energy) / c2_den,
        worst_u: nonneg.worst_u,
        worst_v: nonneg.worst_v,
        below: nonneg.below_tolerance,
    })
}

fn is_non_finite_failure(e: &Error) -> bool {
    match e {
        Error::StepFailure { source, .. } => match source.as_ref() {
            Error::InvalidParameter(m) => m == NON_FINITE_STATE,
            Error::NewtonDivergence { residual, .. } => !residual.is_finite(),
            _ => false,
        },
        _ => false,
    }
}

/// Moment statistics over `n_paths` independent paths of the system. Path
/// `i` is driven by `NoiseKey::new(seed).with_path(i)`.
pub fn ensemble_moments(
    scenario: &Scenario,
    orders: &MomentOrders,
    n_paths: usize,
) -> Result<EnsembleReport> {
    ensemble_moments_with(Execution::default(), scenario, orders, n_paths)
}

pub fn ensemble_moments_with(
    exec: Execution,
    scenario: &Scenario,
    orders: &MomentOrders,
    n_paths: usize,
) -> Result<EnsembleReport> {
    if n_paths < 100 {
        return Err(invalid(format!(
            "ensemble needs at least 100 paths (got {n_paths})"
        )));
    }
    ensemble_unchecked(exec, scenario, orders, n_paths)
}

pub(crate) fn ensemble_unchecked(
    exec: Execution,
    scenario: &Scenario,
    orders: &MomentOrders,
    n_paths: usize,
) -> Result<EnsembleReport> {
    let stepper = scenario.stepper;
    let steps = stepper.solver().steps()?;
    let dt = stepper.solver().dt;
    let modes = stepper.basis().len();
    let paths = map_indexed_with(exec, n_paths, |i| -> Result<PathMoments> {
        let key = NoiseKey::new(scenario.seed).with_path(i as u64);
        let noise = NoisePath::generate(key, modes, dt, steps);
        let non_finite = Error::NonFinite {
            seed: scenario.seed,
            path: i as u64,
        };
        let traj = match simulate_path(
            stepper,
            &scenario.u0,
            &scenario.v0,
            &noise,
            PathMode::Coupled,
            &scenario.settings,
        ) {
            Ok(t) => t,
            Err(e) if is_non_finite_failure(&e) => return Err(non_finite),
            Err(e) => return Err(e),
        };
        let m = path_moments(scenario, orders, &traj)?;
        if m.is_finite() {
            Ok(m)
        } else {
            Err(non_finite)
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let est = |f: fn(&PathMoments) -> f64| Estimate::from_samples(paths.iter().map(f));
    Ok(EnsembleReport {
        orders: *orders,
        n_paths,
        sup_u: est(|m| m.sup_u),
        dissipation: est(|m| m.dissipation),
        coupling: est(|m| m.coupling),
        sup_v: est(|m| m.sup_v),
        v_energy: est(|m| m.v_energy),
        c0: est(|m| m.c0),
        c2: est(|m| m.c2),
        worst_min_u: paths
            .iter()
            .map(|m| m.worst_u)
            .fold(f64::INFINITY, f64::min),
        worst_min_v: paths
            .iter()
            .map(|m| m.worst_v)
            .fold(f64::INFINITY, f64::min),
        below_tolerance: paths.iter().map(|m| m.below).sum(),
    })
}

/// `sup_t |u₁ − u₂|_{H^{−1}}` and `sup_t |v₁ − v₂|_{H^{−δ₀}}` on the full
/// grid basis.
pub fn uniqueness_distance(
    stepper: &Stepper,
    a: &Trajectory,
    b: &Trajectory,
    delta0: f64,
) -> Result<(f64, f64)> {
    if a.states.len() != b.states.len() {
        return Err(invalid("trajectories differ in length"));
    }
    let full = stepper.full_basis();
    let mut du = 0.0f64;
    let mut dv = 0.0f64;
    for (x, y) in a.states.iter().zip(&b.states) {
        let diff = |p: &Field, q: &Field| p.zip_map(q, |s, t| s - t);
        du = du.max(sobolev_norm(full, &diff(&x.u, &y.u), -1.0)?.value);
        dv = dv.max(sobolev_norm(full, &diff(&x.v, &y.v), -delta0)?.value);
    }
    Ok((du, dv))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    /// `D`, the sum of the two sup-distances.
    pub distance: f64,
    pub u_distance: f64,
    pub v_distance: f64,
    pub iterations: [usize; 2],
    pub final_residuals: [f64; 2],
    pub seeds: [u64; 2],
    pub tol: f64,
}

impl UniquenessReport {
    pub fn agrees(&self) -> bool {
        self.distance <= self.tol
    }

    pub fn to_text(&self) -> String {
        format!(
            "distance: {:.17e}\nu_distance: {:.17e}\nv_distance: {:.17e}\niterations: {} {}\nfinal_residuals: {:.6e} {:.6e}\nseeds: {} {}\ntol: {:e}\nagrees: {}\n",
            self.distance,
            self.u_distance,
            self.v_distance,
            self.iterations[0],
            self.iterations[1],
            self.final_residuals[0],
            self.final_residuals[1],
            self.seeds[0],
            self.seeds[1],
            self.tol,
            self.agrees()
        )
    }
}

/// Checks the preconditions of the uniqueness experiment before any solve.
pub fn uniqueness_admissible(stepper: &Stepper, hypothesis: &HypothesisParams) -> Result<()> {
    let report = validate_hypotheses(hypothesis);
    if hypothesis.d != 1 || !report.uniqueness_ok() {
        return Err(invalid(format!(
            "uniqueness experiment needs d = 1 and parameters satisfying the uniqueness hypotheses (d = {}, failed: {:?})",
            hypothesis.d,
            report.failed()
        )));
    }
    if stepper.basis().dim() != hypothesis.d {
        return Err(invalid(format!(
            "hypothesis dimension {} differs from grid dimension {}",
            hypothesis.d,
            stepper.basis().dim()
        )));
    }
    if stepper.model().gamma != hypothesis.gamma {
        return Err(invalid("hypothesis gamma differs from model gamma"));
    }
    Ok(())
}

/// Solves the truncated system twice by Picard iteration, from two initial
/// iterates and the noise of `seeds[i]`, and measures how far apart the
/// solutions are. Equal seeds test uniqueness; distinct seeds are a
/// negative control.
pub fn uniqueness_experiment(
    scenario: &Scenario,
    hypothesis: &HypothesisParams,
    kappa: f64,
    initial: [InitialIterate; 2],
    seeds: [u64; 2],
    picard: &PicardSettings,
    tol: f64,
) -> Result<UniquenessReport> {
    let stepper = scenario.stepper;
    uniqueness_admissible(stepper, hypothesis)?;
    let steps = stepper.solver().steps()?;
    let dt = stepper.solver().dt;
    let modes = stepper.basis().len();
    let [first, second] = initial;
    let mut runs = Vec::with_capacity(2);
    for (init, seed) in [(first, seeds[0]), (second, seeds[1])] {
        let noise = NoisePath::generate(NoiseKey::new(seed), modes, dt, steps);
        let settings = PicardSettings {
            initial: init,
            ..picard.clone()
        };
        runs.push(picard_solve(
            stepper,
            &scenario.u0,
            &scenario.v0,
            kappa,
            &noise,
            &scenario.settings,
            &settings,
        )?);
    }
    let (du, dv) = uniqueness_distance(
        stepper,
        &runs[0].trajectory,
        &runs[1].trajectory,
        hypothesis.delta0,
    )?;
    Ok(UniquenessReport {
        distance: du + dv,
        u_distance: du,
        v_distance: dv,
        iterations: [runs[0].iterations(), runs[1].iterations()],
        final_residuals: [runs[0].final_residual(), runs[1].final_residual()],
        seeds,
        tol,
    })
}
