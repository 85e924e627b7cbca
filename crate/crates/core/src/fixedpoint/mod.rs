//! Truncation, the frozen-system map `V_κ`, its Picard iteration, stopping
//! times and the gluing of truncated segments into one path.

pub mod cutoff;

pub use cutoff::{
    cutoff_phi, h_functional, max_admissible_nu, CutoffParams, FrozenPair, HAccumulator,
};

use serde::Serialize;

use crate::dynamics::{drive, CoupledState, Drive, PathMode, RecordSettings, Stepper, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::field::Field;
use crate::noise::{NoiseKey, NoisePath};
use crate::parallel::map_indexed;
use crate::stats::Estimate;

/// `V_κ(η, ξ)`: the solution of the system whose reaction is
/// `φ_κ(h(η, ξ, t)) η ξ²`.
#[allow(non_snake_case)]
pub fn apply_V(
    stepper: &Stepper,
    pair: &FrozenPair,
    u0: &Field,
    v0: &Field,
    kappa: f64,
    noise: &NoisePath,
    settings: &RecordSettings,
) -> Result<Trajectory> {
    apply_v_from(
        stepper,
        pair,
        CoupledState::new(u0.clone(), v0.clone()),
        kappa,
        noise,
        settings,
    )
}

fn apply_v_from(
    stepper: &Stepper,
    pair: &FrozenPair,
    start: CoupledState,
    kappa: f64,
    noise: &NoisePath,
    settings: &RecordSettings,
) -> Result<Trajectory> {
    drive(
        stepper,
        start,
        noise,
        Drive::Frozen { pair, kappa },
        settings,
        None,
    )
}

/// Starting point of the Picard iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialIterate {
    /// `V_κ(0, 0)`, the reaction-free solution.
    #[default]
    ZeroReaction,
    /// The zero pair.
    Zero,
    Given(FrozenPair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub initial: InitialIterate,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            initial: InitialIterate::ZeroReaction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub trajectory: Trajectory,
    /// `r_n` for every iteration performed.
    pub residuals: Vec<f64>,
}

impl PicardResult {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("at least one iteration")
    }
}

/// `(Σ_i w |x_i|^p)^{1/p}` evaluated with scaling, so that tiny values do
/// not underflow when raised to large powers.
fn scaled_norm(values: impl Iterator<Item = f64> + Clone, p: f64, weight: f64) -> f64 {
    let big = values.clone().fold(0.0, |a: f64, x| a.max(x.abs()));
    if big == 0.0 || !big.is_finite() {
        return big;
    }
    let s: f64 = values.map(|x| (x.abs() / big).powf(p)).sum();
    big * (weight * s).powf(1.0 / p)
}

/// Discrete `‖Δu‖_{L^{γ+1}(0,T;L^{γ+1})} + ‖Δv‖_{L^{m₀}(0,T;L^m)}` over the
/// grid times `t_1, …, t_N`.
pub fn m_norm_distance(a: &FrozenPair, b: &FrozenPair, params: &CutoffParams) -> f64 {
    let dt = a.dt;
    let n = a.eta.len().min(b.eta.len());
    let q = params.gamma + 1.0;
    let mut u_space = Vec::with_capacity(n);
    let mut v_space = Vec::with_capacity(n);
    for i in 1..n {
        let du = a.eta[i].zip_map(&b.eta[i], |x, y| x - y);
        let dv = a.xi[i].zip_map(&b.xi[i], |x, y| x - y);
        u_space.push(scaled_norm(
            du.values().iter().copied(),
            q,
            du.cell_volume(),
        ));
        v_space.push(scaled_norm(
            dv.values().iter().copied(),
            params.m,
            dv.cell_volume(),
        ));
    }
    scaled_norm(u_space.iter().copied(), q, dt)
        + scaled_norm(v_space.iter().copied(), params.m0, dt)
}

/// Iterates `(η, ξ) ← V_κ(η, ξ)` until successive iterates differ by at
/// most `tol` in the discrete M-norm. The returned trajectory is the last
/// image `V_κ` produced.
pub fn picard_solve(
    stepper: &Stepper,
    u0: &Field,
    v0: &Field,
    kappa: f64,
    noise: &NoisePath,
    settings: &RecordSettings,
    picard: &PicardSettings,
) -> Result<PicardResult> {
    picard_from(
        stepper,
        CoupledState::new(u0.clone(), v0.clone()),
        kappa,
        noise,
        settings,
        picard,
    )
}

fn picard_from(
    stepper: &Stepper,
    start: CoupledState,
    kappa: f64,
    noise: &NoisePath,
    settings: &RecordSettings,
    picard: &PicardSettings,
) -> Result<PicardResult> {
    if !(picard.tol > 0.0) || picard.max_iter == 0 {
        return Err(invalid(
            "picard tolerance and iteration limit must be positive",
        ));
    }
    let steps = noise.steps();
    let mut pair = match &picard.initial {
        InitialIterate::Zero => FrozenPair::zero(noise.dt(), steps, &start.u),
        InitialIterate::ZeroReaction => {
            let zero = FrozenPair::zero(noise.dt(), steps, &start.u);
            apply_v_from(stepper, &zero, start.clone(), kappa, noise, settings)?.as_pair()
        }
        InitialIterate::Given(p) => {
            if p.steps() != steps {
                return Err(invalid(format!(
                    "initial iterate covers {} steps, noise path {steps}",
                    p.steps()
                )));
            }
            p.clone()
        }
    };
    let mut residuals = Vec::new();
    for _ in 0..picard.max_iter {
        let image = apply_v_from(stepper, &pair, start.clone(), kappa, noise, settings)?;
        let next = image.as_pair();
        let r = m_norm_distance(&next, &pair, &settings.cutoff);
        residuals.push(r);
        if !r.is_finite() {
            break;
        }
        if r <= picard.tol {
            return Ok(PicardResult {
                trajectory: image,
                residuals,
            });
        }
        pair = next;
    }
    Err(Error::PicardNonConvergence {
        iterations: residuals.len(),
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

/// First grid time with `h ≥ κ`, if any.
pub fn first_exit_time(trajectory: &Trajectory, kappa: f64) -> Result<Option<f64>> {
    Ok(first_exit_index(trajectory, kappa)?.map(|i| trajectory.norms[i].t))
}

fn first_exit_index(trajectory: &Trajectory, kappa: f64) -> Result<Option<usize>> {
    if !(kappa > 0.0) {
        return Err(invalid(format!(
            "cutoff level must be positive (got {kappa})"
        )));
    }
    if trajectory.norms.is_empty() || trajectory.norms.len() != trajectory.states.len() {
        return Err(invalid("trajectory lacks h records"));
    }
    Ok(trajectory.norms.iter().position(|r| r.h >= kappa))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RungReport {
    pub rung: usize,
    pub kappa: f64,
    pub start_time: f64,
    /// Time at which `h` reached `κ`, or `None` if it stayed below.
    pub exit_time: Option<f64>,
    pub picard_iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlueResult {
    /// Concatenated path; `h` restarts from 0 at every junction.
    pub trajectory: Trajectory,
    pub rungs: Vec<RungReport>,
    /// Start of the decoupled continuation, if every rung exited early.
    pub tail_start: Option<f64>,
    /// State indices where a new segment begins.
    pub junctions: Vec<usize>,
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.first().is_some_and(|k| !(*k > 0.0)) || ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(
            "cutoff ladder must be positive and strictly increasing",
        ));
    }
    Ok(())
}

fn append(into: &mut Option<Trajectory>, seg: Trajectory, upto: usize) -> usize {
    match into {
        None => {
            let mut seg = seg;
            seg.states.truncate(upto + 1);
            seg.norms.truncate(upto + 1);
            *into = Some(seg);
            0
        }
        Some(t) => {
            let at = t.states.len() - 1;
            t.states
                .extend(seg.states.into_iter().take(upto + 1).skip(1));
            t.norms.extend(seg.norms.into_iter().take(upto + 1).skip(1));
            at
        }
    }
}

/// Follows the truncated system at `κ₁` until `h` reaches `κ₁`, restarts
/// from that state at `κ₂` with fresh noise, and so on; once every rung has
/// exited the path continues with the decoupled dynamics. Rung `i` draws its
/// noise from `key.with_rung(i)`, the continuation from `ladder.len()`.
pub fn glue_simulate(
    stepper: &Stepper,
    u0: &Field,
    v0: &Field,
    ladder: &[f64],
    key: NoiseKey,
    settings: &RecordSettings,
    picard: &PicardSettings,
) -> Result<GlueResult> {
    check_ladder(ladder)?;
    let total = stepper.solver().steps()?;
    let dt = stepper.solver().dt;
    let modes = stepper.basis().len();
    let mut state = CoupledState::new(u0.clone(), v0.clone());
    let mut pos = 0;
    let mut out: Option<Trajectory> = None;
    let mut rungs = Vec::new();
    let mut junctions = Vec::new();
    let mut tail_start = None;

    for (i, &kappa) in ladder.iter().enumerate() {
        if pos == total {
            break;
        }
        let noise = NoisePath::generate(key.with_rung(i as u64), modes, dt, total - pos);
        let res = picard_from(stepper, state.clone(), kappa, &noise, settings, picard)?;
        let exit = first_exit_index(&res.trajectory, kappa)?;
        rungs.push(RungReport {
            rung: i,
            kappa,
            start_time: state.t,
            exit_time: exit.map(|e| res.trajectory.norms[e].t),
            picard_iterations: res.iterations(),
            final_residual: res.final_residual(),
        });
        let upto = exit.unwrap_or(total - pos);
        state = res.trajectory.states[upto].clone();
        junctions.push(append(&mut out, res.trajectory, upto));
        pos += upto;
        if exit.is_none() {
            break;
        }
    }
    if pos < total && rungs.last().is_some_and(|r| r.exit_time.is_some()) {
        tail_start = Some(state.t);
        let noise = NoisePath::generate(key.with_rung(ladder.len() as u64), modes, dt, total - pos);
        let tail = drive(
            stepper,
            state.clone(),
            &noise,
            Drive::Mode(PathMode::Decoupled),
            settings,
            None,
        )?;
        junctions.push(append(&mut out, tail, total - pos));
    }
    let trajectory = match out {
        Some(t) => t,
        None => drive(
            stepper,
            state,
            &NoisePath::zero(modes, dt, 0),
            Drive::Mode(PathMode::Coupled),
            settings,
            None,
        )?,
    };
    Ok(GlueResult {
        trajectory,
        rungs,
        tail_start,
        junctions,
    })
}

/// Ladder whose exhaustion defines `τ̄_κ`: `1, 2, …, ⌊κ⌋` for `κ ≥ 1`,
/// the single rung `κ` otherwise.
pub fn exit_ladder(kappa: f64) -> Vec<f64> {
    if kappa >= 1.0 {
        (1..=kappa.floor() as usize).map(|i| i as f64).collect()
    } else {
        vec![kappa]
    }
}

/// Initial data and recording settings shared by all paths of an experiment.
pub struct Scenario<'s, 'b> {
    pub stepper: &'s Stepper<'b>,
    pub u0: Field,
    pub v0: Field,
    pub settings: RecordSettings,
    pub seed: u64,
}

/// Runs the ladder along one path with the directly truncated system and
/// returns, per rung, whether it exited before the final time.
fn ladder_exits(scenario: &Scenario, ladder: &[f64], path: u64) -> Result<Vec<bool>> {
    let stepper = scenario.stepper;
    let total = stepper.solver().steps()?;
    let dt = stepper.solver().dt;
    let modes = stepper.basis().len();
    let key = NoiseKey::new(scenario.seed).with_path(path);
    let mut state = CoupledState::new(scenario.u0.clone(), scenario.v0.clone());
    let mut pos = 0;
    let mut exits = Vec::with_capacity(ladder.len());
    for (i, &kappa) in ladder.iter().enumerate() {
        if pos == total {
            break;
        }
        let noise = NoisePath::generate(key.with_rung(i as u64), modes, dt, total - pos);
        let traj = drive(
            stepper,
            state,
            &noise,
            Drive::Mode(PathMode::Truncated { kappa }),
            &scenario.settings,
            Some(kappa),
        )?;
        match first_exit_index(&traj, kappa)? {
            Some(e) if pos + e < total => {
                exits.push(true);
                pos += e;
                state = traj.states[e].clone();
            }
            _ => break,
        }
    }
    exits.resize(ladder.len(), false);
    Ok(exits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitEstimate {
    pub kappa: f64,
    /// Fraction of paths with `τ̄_κ < T`.
    pub p_hat: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Monte-Carlo estimate of `P(τ̄_κ < T)` for each level.
///
/// Every path draws its own noise (`path` index of the key). Levels `κ ≥ 1`
/// share one run of the ladder `1, 2, …, ⌊max κ⌋`, so the estimates are
/// monotone along each path. The truncated system is integrated directly;
/// at a converged fixed point it coincides with the Picard solution.
pub fn exit_prob_estimate(
    scenario: &Scenario,
    kappas: &[f64],
    n_paths: usize,
) -> Result<Vec<ExitEstimate>> {
    if n_paths < 100 {
        return Err(invalid(format!(
            "exit probability needs at least 100 paths (got {n_paths})"
        )));
    }
    if kappas.iter().any(|k| !(*k > 0.0)) {
        return Err(invalid("cutoff levels must be positive"));
    }
    let top = kappas
        .iter()
        .copied()
        .filter(|k| *k >= 1.0)
        .fold(0.0, f64::max);
    let shared = exit_ladder(top.max(1.0));

    let per_path = map_indexed(n_paths, |p| -> Result<Vec<bool>> {
        let exits = if top >= 1.0 {
            ladder_exits(scenario, &shared, p as u64)?
        } else {
            Vec::new()
        };
        let mut out = Vec::with_capacity(kappas.len());
        for &k in kappas {
            if k >= 1.0 {
                let rungs = k.floor() as usize;
                out.push(exits[..rungs].iter().all(|e| *e));
            } else {
                out.push(ladder_exits(scenario, &[k], p as u64)?[0]);
            }
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(kappas
        .iter()
        .enumerate()
        .map(|(j, &kappa)| {
            let e =
                Estimate::from_samples(per_path.iter().map(|row| if row[j] { 1.0 } else { 0.0 }));
            ExitEstimate {
                kappa,
                p_hat: e.mean,
                std_error: e.std_error,
                n_paths,
            }
        })
        .collect())
}

/// Fits of `p̂(κ) ≈ c/κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    /// Smallest `c` with `c/κ ≥ p̂(κ)` at every level.
    pub envelope: f64,
    /// Least-squares `c`.
    pub least_squares: f64,
}

pub fn fit_tail(estimates: &[ExitEstimate]) -> TailFit {
    let envelope = estimates
        .iter()
        .map(|e| e.kappa * e.p_hat)
        .fold(0.0, f64::max);
    let num: f64 = estimates.iter().map(|e| e.p_hat / e.kappa).sum();
    let den: f64 = estimates.iter().map(|e| 1.0 / (e.kappa * e.kappa)).sum();
    TailFit {
        envelope,
        least_squares: if den > 0.0 { num / den } else { 0.0 },
    }
}

#[cfg(test)]
mod tests;
