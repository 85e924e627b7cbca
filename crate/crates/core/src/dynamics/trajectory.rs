use serde::Serialize;

use super::{CoupledState, Stepper};
use crate::error::{invalid, Error, Result};
use crate::field::{lp_norm_unchecked, sobolev_norm, Field};
use crate::fixedpoint::cutoff::{phi, CutoffParams, FrozenPair, HAccumulator};
use crate::noise::NoisePath;

pub(crate) const NON_FINITE_STATE: &str = "state became non-finite";

/// How the reaction term is fed along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathMode {
    /// The system itself.
    Coupled,
    /// No reaction, extra decay in `v`.
    Decoupled,
    /// Reaction scaled by `φ_κ(h(u, v, t))` of the path's own history.
    Truncated { kappa: f64 },
}

pub(crate) enum Drive<'p> {
    Mode(PathMode),
    /// Reaction `φ_κ(h(η, ξ, t)) η ξ²` from a fixed pair.
    Frozen {
        pair: &'p FrozenPair,
        kappa: f64,
    },
}

/// What to record besides the states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordSettings {
    /// Sobolev order of the recorded `v` norm.
    pub rho: f64,
    /// Exponents of the running `h` value.
    pub cutoff: CutoffParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormRecord {
    pub t: f64,
    pub u_l2: f64,
    /// `|u|_{L^{γ+1}}`.
    pub u_lgamma1: f64,
    pub v_hrho: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub max_u: f64,
    pub max_v: f64,
    /// `h(u, v, t)` of the path's own history.
    pub h: f64,
}

/// States at every grid time with one norm record per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<CoupledState>,
    pub norms: Vec<NormRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &CoupledState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.t)
    }

    /// The `(u, v)` history as a frozen pair.
    pub fn as_pair(&self) -> FrozenPair {
        FrozenPair {
            dt: self.dt,
            eta: self.states.iter().map(|s| s.u.clone()).collect(),
            xi: self.states.iter().map(|s| s.v.clone()).collect(),
        }
    }

    /// States whose index is a multiple of `stride`, plus the last one.
    pub fn snapshots(&self, stride: usize) -> Vec<&CoupledState> {
        let stride = stride.max(1);
        let last = self.states.len() - 1;
        self.states
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i == last)
            .map(|(_, s)| s)
            .collect()
    }

    /// Worst values of `min u` and `min v` along the path.
    pub fn worst_minima(&self) -> (f64, f64) {
        self.norms
            .iter()
            .fold((f64::INFINITY, f64::INFINITY), |(a, b), r| {
                (a.min(r.min_u), b.min(r.min_v))
            })
    }
}

fn record(
    stepper: &Stepper,
    state: &CoupledState,
    settings: &RecordSettings,
    h: f64,
) -> Result<NormRecord> {
    let gamma = stepper.model().gamma;
    Ok(NormRecord {
        t: state.t,
        u_l2: state.u.l2_norm(),
        u_lgamma1: lp_norm_unchecked(&state.u, gamma + 1.0),
        v_hrho: sobolev_norm(stepper.full_basis(), &state.v, settings.rho)?.value,
        min_u: state.u.min(),
        min_v: state.v.min(),
        max_u: state.u.max(),
        max_v: state.v.max(),
        h,
    })
}

/// Runs one path over the whole noise grid.
pub fn simulate_path(
    stepper: &Stepper,
    u0: &Field,
    v0: &Field,
    noise: &NoisePath,
    mode: PathMode,
    settings: &RecordSettings,
) -> Result<Trajectory> {
    drive(
        stepper,
        CoupledState::new(u0.clone(), v0.clone()),
        noise,
        Drive::Mode(mode),
        settings,
        None,
    )
}

pub(crate) fn drive(
    stepper: &Stepper,
    start: CoupledState,
    noise: &NoisePath,
    how: Drive,
    settings: &RecordSettings,
    stop_at_h: Option<f64>,
) -> Result<Trajectory> {
    let basis = stepper.basis();
    let dt = stepper.solver().dt;
    if !start.u.same_shape(&basis.zeros()) || !start.v.same_shape(&basis.zeros()) {
        return Err(Error::ShapeMismatch {
            expected: basis.grid_len(),
            got: start.u.len().min(start.v.len()),
        });
    }
    if noise.modes() != basis.len() {
        return Err(invalid(format!(
            "noise path carries {} modes, basis has {}",
            noise.modes(),
            basis.len()
        )));
    }
    if (noise.dt() - dt).abs() > 1e-12 * dt {
        return Err(invalid(format!(
            "noise time step {} differs from solver step {dt}",
            noise.dt()
        )));
    }
    let steps = noise.steps();
    match how {
        Drive::Mode(PathMode::Truncated { kappa }) | Drive::Frozen { kappa, .. }
            if !(kappa > 0.0) =>
        {
            return Err(invalid(format!(
                "cutoff level must be positive (got {kappa})"
            )));
        }
        _ => {}
    }
    let pair_h = match &how {
        Drive::Frozen { pair, .. } => {
            if pair.steps() < steps {
                return Err(invalid(format!(
                    "frozen pair covers {} steps, path needs {steps}",
                    pair.steps()
                )));
            }
            Some(pair.h_series(&settings.cutoff))
        }
        Drive::Mode(_) => None,
    };

    let mut own_h = HAccumulator::new(&settings.cutoff);
    let mut states = Vec::with_capacity(steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push(record(stepper, &start, settings, own_h.value())?);
    states.push(start);

    for n in 0..steps {
        let state = &states[n];
        let dw1 = stepper.noise().increment_field(basis, noise, 1, n);
        let dw2 = stepper.noise().increment_field(basis, noise, 2, n);
        let result = match &how {
            Drive::Mode(PathMode::Coupled) => stepper.step_coupled(state, &dw1, &dw2),
            Drive::Mode(PathMode::Decoupled) => stepper.step_decoupled(state, &dw1, &dw2),
            Drive::Mode(PathMode::Truncated { kappa }) => {
                let p = phi(own_h.value() / kappa);
                stepper.step_frozen(state, &state.u, &state.v, p, &dw1, &dw2)
            }
            Drive::Frozen { pair, kappa } => {
                let h = pair_h.as_ref().expect("pair h series")[n];
                stepper.step_frozen(state, &pair.eta[n], &pair.xi[n], phi(h / kappa), &dw1, &dw2)
            }
        };
        let next = result.map_err(|e| Error::StepFailure {
            step: n,
            source: Box::new(e),
        })?;
        if !next.is_finite() {
            return Err(Error::StepFailure {
                step: n,
                source: Box::new(invalid(NON_FINITE_STATE)),
            });
        }
        own_h.push(&state.u, &state.v, dt);
        norms.push(record(stepper, &next, settings, own_h.value())?);
        states.push(next);
        if stop_at_h.is_some_and(|level| own_h.value() >= level) {
            break;
        }
    }
    Ok(Trajectory { dt, states, norms })
}
