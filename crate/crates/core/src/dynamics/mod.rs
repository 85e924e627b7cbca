//! Time stepping for the coupled system
//!
//! ```text
//! du = ( r_u Δu^{[γ]} − χ u v² + k − f u ) dt + σ₁ u dW₁
//! dv = ( r_v Δv + u v² − g v ) dt + σ₂ v dW₂
//! ```
//!
//! by Lie splitting: the reaction and noise are explicit (evaluated at the
//! start of the step), the porous-medium part is implicit and the heat part
//! uses the exact spectral semigroup.

mod porous;
mod trajectory;

pub use porous::{NewtonReport, NewtonSettings, JACOBIAN_FLOOR};
pub use trajectory::{simulate_path, NormRecord, PathMode, RecordSettings, Trajectory};

pub(crate) use porous::PorousSolver;
pub(crate) use trajectory::{drive, Drive, NON_FINITE_STATE};

use serde::{Deserialize, Serialize};

use crate::basis::SpectralBasis;
use crate::error::{invalid, Result};
use crate::field::Field;
use crate::noise::{stratonovich_correction, NoiseField, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calculus {
    #[default]
    Ito,
    Stratonovich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonnegPolicy {
    /// Record negative values without touching them.
    #[default]
    Monitor,
    /// Clip both components at zero after every step.
    Project,
}

/// Physical constants. `rain`, `evaporation` and `mortality` are the `k`,
/// `f`, `g` of the original Klausmeier model; all zero gives the reduced
/// stochastic system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub r_u: f64,
    #[serde(default = "one")]
    pub r_v: f64,
    #[serde(default = "one")]
    pub chi: f64,
    pub gamma: f64,
    #[serde(default)]
    pub rain: f64,
    #[serde(default)]
    pub evaporation: f64,
    #[serde(default)]
    pub mortality: f64,
    #[serde(default)]
    pub sigma1: f64,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub calculus: Calculus,
}

fn one() -> f64 {
    1.0
}

/// Conditions outside the analysed regime that are allowed but reported.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ModelFlags {
    /// `γ ≤ 2`: below the exponent range of the existence theory.
    pub gamma_below_theory: bool,
    /// `γ < 1.1`: close to linear diffusion, Newton may converge slowly.
    pub gamma_near_linear: bool,
    /// Some of `r_u`, `r_v`, `χ` are zero.
    pub zero_rates: Vec<&'static str>,
}

impl ModelConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            r_u: 1.0,
            r_v: 1.0,
            chi: 1.0,
            gamma,
            rain: 0.0,
            evaporation: 0.0,
            mortality: 0.0,
            sigma1: 0.0,
            sigma2: 0.0,
            calculus: Calculus::Ito,
        }
    }

    /// Rejects `γ ≤ 1`, negative rates and non-finite constants; returns
    /// the flags for admissible but unusual settings.
    pub fn validate(&self) -> Result<ModelFlags> {
        let all = [
            ("r_u", self.r_u),
            ("r_v", self.r_v),
            ("chi", self.chi),
            ("gamma", self.gamma),
            ("rain", self.rain),
            ("evaporation", self.evaporation),
            ("mortality", self.mortality),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
        ];
        for (name, x) in all {
            if !x.is_finite() {
                return Err(invalid(format!("{name} must be finite (got {x})")));
            }
        }
        if self.gamma <= 1.0 {
            return Err(invalid(format!(
                "porous-medium exponent must exceed 1 (got {})",
                self.gamma
            )));
        }
        for (name, x) in &all[..3] {
            if *x < 0.0 {
                return Err(invalid(format!("{name} must be nonnegative (got {x})")));
            }
        }
        for (name, x) in &all[4..7] {
            if *x < 0.0 {
                return Err(invalid(format!("{name} must be nonnegative (got {x})")));
            }
        }
        Ok(ModelFlags {
            gamma_below_theory: self.gamma <= 2.0,
            gamma_near_linear: self.gamma < 1.1,
            zero_rates: all[..3]
                .iter()
                .filter(|(_, x)| *x == 0.0)
                .map(|(n, _)| *n)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default)]
    pub nonneg_policy: NonnegPolicy,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_newton_max_iter() -> usize {
    50
}

fn default_stride() -> usize {
    1
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
            nonneg_policy: NonnegPolicy::Monitor,
            snapshot_stride: 1,
        }
    }

    /// Number of steps; `t_end` must be a whole multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        Ok((self.t_end / self.dt).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!(
                "time step must be positive (got {})",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid(format!(
                "final time must be nonnegative (got {})",
                self.t_end
            )));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return Err(invalid(format!(
                "time step {} exceeds final time {}",
                self.dt, self.t_end
            )));
        }
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid(format!(
                "final time {} is not a multiple of the time step {}",
                self.t_end, self.dt
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(invalid(
                "newton tolerance and iteration limit must be positive",
            ));
        }
        if self.snapshot_stride == 0 {
            return Err(invalid("snapshot stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub u: Field,
    pub v: Field,
    pub t: f64,
}

impl CoupledState {
    pub fn new(u: Field, v: Field) -> Self {
        Self { u, v, t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite() && self.t.is_finite()
    }
}

/// Everything needed to advance one path by one step.
pub struct Stepper<'a> {
    basis: &'a SpectralBasis,
    /// Complete basis on the same grid, for the heat semigroup and norms.
    full: SpectralBasis,
    model: ModelConfig,
    solver: SolverConfig,
    noise: NoiseField,
    porous: PorousSolver<'a>,
    /// Linear drift coefficients `c₁`, `c₂` (added as `u c₁`, `v c₂`).
    drift: [Option<Field>; 2],
}

impl<'a> Stepper<'a> {
    /// `basis` carries the noise modes; the heat and porous-medium parts
    /// act on the whole grid.
    pub fn new(
        basis: &'a SpectralBasis,
        model: ModelConfig,
        solver: SolverConfig,
        noise: &NoiseSpec,
    ) -> Result<Self> {
        model.validate()?;
        solver.validate()?;
        let full = SpectralBasis::full(basis.dim(), basis.boundary(), basis.n())?;
        let porous = PorousSolver::new(
            basis,
            model.gamma,
            NewtonSettings {
                tol: solver.newton_tol,
                max_iter: solver.newton_max_iter,
            },
        )?;
        let drift = match model.calculus {
            Calculus::Ito => [None, None],
            Calculus::Stratonovich => [
                Some(stratonovich_correction(noise, basis, model.sigma1, 1)),
                Some(stratonovich_correction(noise, basis, model.sigma2, 2)),
            ],
        };
        Ok(Self {
            basis,
            full,
            model,
            solver,
            noise: NoiseField::new(noise, basis),
            porous,
            drift,
        })
    }

    /// Adds the linear drifts `u c₁` and `v c₂` to the sources. With the
    /// Stratonovich corrections this reproduces the Stratonovich scheme.
    pub fn with_linear_drift(mut self, c1: Field, c2: Field) -> Self {
        self.drift = [Some(c1), Some(c2)];
        self
    }

    pub fn basis(&self) -> &SpectralBasis {
        self.basis
    }

    pub fn full_basis(&self) -> &SpectralBasis {
        &self.full
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn noise(&self) -> &NoiseField {
        &self.noise
    }

    /// Solves `u⁺ − Δt r_u Δ(u⁺)^{[γ]} = u + Δt·source + σ₁ u ΔW₁`.
    pub fn pm_implicit_step(
        &self,
        u: &Field,
        source: &Field,
        dw1: &Field,
        dt: f64,
    ) -> Result<Field> {
        check_dt(dt)?;
        let sigma = self.model.sigma1;
        let mut b = u.clone();
        for (((bi, ui), si), wi) in b
            .values_mut()
            .iter_mut()
            .zip(u.values())
            .zip(source.values())
            .zip(dw1.values())
        {
            *bi = ui + dt * si + sigma * ui * wi;
        }
        let (x, _) = self.porous.solve(&b, dt * self.model.r_u, u.l2_norm())?;
        if !x.is_finite() {
            return Err(invalid("porous-medium step produced non-finite values"));
        }
        Ok(x)
    }

    /// `v⁺ = e^{(r_v Δ − extra_decay)Δt} v + Δt·source + σ₂ v ΔW₂`.
    pub fn heat_step(
        &self,
        v: &Field,
        source: &Field,
        dw2: &Field,
        dt: f64,
        extra_decay: f64,
    ) -> Result<Field> {
        check_dt(dt)?;
        if !(extra_decay >= 0.0) {
            return Err(invalid(format!(
                "extra decay must be nonnegative (got {extra_decay})"
            )));
        }
        let mut out = self.semigroup(v, dt, extra_decay)?;
        let sigma = self.model.sigma2;
        for (((o, vi), si), wi) in out
            .values_mut()
            .iter_mut()
            .zip(v.values())
            .zip(source.values())
            .zip(dw2.values())
        {
            *o += dt * si + sigma * vi * wi;
        }
        Ok(out)
    }

    fn semigroup(&self, v: &Field, dt: f64, extra: f64) -> Result<Field> {
        let r_v = self.model.r_v;
        if r_v == 0.0 && extra == 0.0 {
            return Ok(v.clone());
        }
        let mut c = self.full.analyze(v)?;
        let projected = self.full.synthesize(&c)?;
        for (ck, nu) in c.iter_mut().zip(self.full.eigenvalues()) {
            *ck *= (-(r_v * nu + extra) * dt).exp();
        }
        let mut out = self.full.synthesize(&c)?;
        // periodic grids carry one component beyond the mode set; it decays
        // at least as fast as the Nyquist frequency
        let n = self.full.n() as f64;
        let tail = (-(r_v * std::f64::consts::PI.powi(2) * n * n + extra) * dt).exp();
        for ((o, vi), pi) in out
            .values_mut()
            .iter_mut()
            .zip(v.values())
            .zip(projected.values())
        {
            *o += tail * (vi - pi);
        }
        Ok(out)
    }

    fn sources(&self, u: &Field, v: &Field, reaction: &Field) -> (Field, Field) {
        let m = &self.model;
        let mut su = reaction.zip_map(u, |r, ui| -m.chi * r + m.rain - m.evaporation * ui);
        let mut sv = reaction.zip_map(v, |r, vi| r - m.mortality * vi);
        if let Some(c1) = &self.drift[0] {
            for ((s, ui), ci) in su.values_mut().iter_mut().zip(u.values()).zip(c1.values()) {
                *s += ui * ci;
            }
        }
        if let Some(c2) = &self.drift[1] {
            for ((s, vi), ci) in sv.values_mut().iter_mut().zip(v.values()).zip(c2.values()) {
                *s += vi * ci;
            }
        }
        (su, sv)
    }

    fn finish(&self, mut u: Field, mut v: Field, t: f64) -> CoupledState {
        if self.solver.nonneg_policy == NonnegPolicy::Project {
            for x in u.values_mut().iter_mut().chain(v.values_mut()) {
                *x = x.max(0.0);
            }
        }
        CoupledState { u, v, t }
    }

    /// One step of the coupled system.
    pub fn step_coupled(
        &self,
        state: &CoupledState,
        dw1: &Field,
        dw2: &Field,
    ) -> Result<CoupledState> {
        self.step_frozen(state, &state.u, &state.v, 1.0, dw1, dw2)
    }

    /// One step with the reaction `φ η ξ²` taken from external fields.
    pub fn step_frozen(
        &self,
        state: &CoupledState,
        eta: &Field,
        xi: &Field,
        phi: f64,
        dw1: &Field,
        dw2: &Field,
    ) -> Result<CoupledState> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(invalid(format!("cutoff value {phi} outside [0, 1]")));
        }
        let dt = self.solver.dt;
        let reaction = eta.zip_map(xi, |e, x| phi * (e * x * x));
        let (su, sv) = self.sources(&state.u, &state.v, &reaction);
        let u = self.pm_implicit_step(&state.u, &su, dw1, dt)?;
        let v = self.heat_step(&state.v, &sv, dw2, dt, 0.0)?;
        Ok(self.finish(u, v, state.t + dt))
    }

    /// One step of the uncoupled continuation: noisy porous medium for `u`,
    /// noisy heat flow with unit extra decay for `v`.
    pub fn step_decoupled(
        &self,
        state: &CoupledState,
        dw1: &Field,
        dw2: &Field,
    ) -> Result<CoupledState> {
        let dt = self.solver.dt;
        let zero = self.basis.zeros();
        let u = self.pm_implicit_step(&state.u, &zero, dw1, dt)?;
        let v = self.heat_step(&state.v, &zero, dw2, dt, 1.0)?;
        Ok(self.finish(u, v, state.t + dt))
    }
}

/// Spatially homogeneous equilibrium `(u*, v*)` with `v* > 0` of the
/// deterministic system: `u* v* = g` and `χ g v² − k v + f g = 0`; the
/// larger root in `v` is returned. `None` if `g = 0` or no positive root
/// exists.
pub fn homogeneous_steady_state(model: &ModelConfig) -> Option<(f64, f64)> {
    let (k, f, g, chi) = (model.rain, model.evaporation, model.mortality, model.chi);
    if g <= 0.0 {
        return None;
    }
    let v = if chi == 0.0 {
        (k > 0.0).then(|| f * g / k)?
    } else {
        let disc = k * k - 4.0 * chi * g * f * g;
        if disc < 0.0 {
            return None;
        }
        (k + disc.sqrt()) / (2.0 * chi * g)
    };
    (v > 0.0).then(|| (g / v, v))
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("time step must be positive (got {dt})")))
    }
}
