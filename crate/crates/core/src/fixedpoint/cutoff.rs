//! Smooth cutoff `φ_κ` and the running norm budget
//! `h(η,ξ,t) = (∫_0^t |η|_{L^{γ+1}}^{γ+1})^ν + (∫_0^t |ξ|_{L^m}^{m₀})^ν`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{lp_power_sum, Field};

/// Truncation level together with the exponents entering `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    pub kappa: f64,
    pub nu: f64,
    pub gamma: f64,
    pub m: f64,
    pub m0: f64,
    pub p0_star: f64,
}

impl CutoffParams {
    /// Uses the largest admissible `ν` (see [`max_admissible_nu`]).
    pub fn new(kappa: f64, gamma: f64, m: f64, m0: f64, p0_star: f64) -> Result<Self> {
        let nu = max_admissible_nu(gamma, m0, p0_star);
        let p = Self {
            kappa,
            nu,
            gamma,
            m,
            m0,
            p0_star,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_nu(self, nu: f64) -> Result<Self> {
        let p = Self { nu, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn with_kappa(self, kappa: f64) -> Self {
        Self { kappa, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(invalid(format!(
                "cutoff level must be positive (got {})",
                self.kappa
            )));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(invalid(format!(
                "h exponent ν = {} outside (0, 1]",
                self.nu
            )));
        }
        if !(self.gamma > 1.0 && self.m >= 1.0 && self.m0 > 0.0 && self.p0_star > 0.0) {
            return Err(invalid(
                "cutoff exponents must satisfy γ > 1, m ≥ 1, m₀ > 0, p₀* > 0",
            ));
        }
        let inv_p = 1.0 / self.p0_star;
        let eps = 1e-12;
        if inv_p + self.nu * self.m0 / (self.gamma + 1.0) > 1.0 + eps {
            return Err(invalid(format!(
                "ν = {} violates 1/p₀* + ν m₀/(γ+1) ≤ 1",
                self.nu
            )));
        }
        if inv_p + self.nu / self.m0 > 1.0 + eps {
            return Err(invalid(format!(
                "ν = {} violates 1/p₀* + ν/m₀ ≤ 1",
                self.nu
            )));
        }
        Ok(())
    }
}

/// Largest `ν ∈ (0, 1]` with `1/p₀* + ν m₀/(γ+1) ≤ 1` and `1/p₀* + ν/m₀ ≤ 1`.
pub fn max_admissible_nu(gamma: f64, m0: f64, p0_star: f64) -> f64 {
    let room = 1.0 - 1.0 / p0_star;
    (room * (gamma + 1.0) / m0).min(room * m0).min(1.0)
}

/// `exp(−1/t)` for `t > 0`, else 0.
fn mollifier(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 at `t ≤ 0`, 1 at `t ≥ 1`, C^∞ and monotone; maximal slope 2.
fn smooth_step(t: f64) -> f64 {
    let a = mollifier(t);
    let b = mollifier(1.0 - t);
    a / (a + b)
}

/// `φ(x/κ)` with `φ = 1` on `|x| ≤ 1` and `φ = 0` on `|x| ≥ 2`.
pub fn cutoff_phi(x: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(invalid(format!(
            "cutoff level must be positive (got {kappa})"
        )));
    }
    Ok(phi(x / kappa))
}

pub(crate) fn phi(y: f64) -> f64 {
    let a = y.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        smooth_step(2.0 - a)
    }
}

/// Left-endpoint accumulation of the two integrals in `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HAccumulator {
    gamma: f64,
    m: f64,
    m0: f64,
    nu: f64,
    eta_integral: f64,
    xi_integral: f64,
}

impl HAccumulator {
    pub fn new(params: &CutoffParams) -> Self {
        Self {
            gamma: params.gamma,
            m: params.m,
            m0: params.m0,
            nu: params.nu,
            eta_integral: 0.0,
            xi_integral: 0.0,
        }
    }

    /// Adds the contribution of the interval `[t_n, t_n + dt)` with the
    /// fields evaluated at `t_n`.
    pub fn push(&mut self, eta: &Field, xi: &Field, dt: f64) {
        self.eta_integral += dt * lp_power_sum(eta, self.gamma + 1.0);
        let xi_m = lp_power_sum(xi, self.m).powf(1.0 / self.m);
        self.xi_integral += dt * xi_m.powf(self.m0);
    }

    pub fn value(&self) -> f64 {
        self.eta_integral.powf(self.nu) + self.xi_integral.powf(self.nu)
    }
}

/// Frozen inputs `(η, ξ)` on the solver's time grid (`steps + 1` fields each).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPair {
    pub dt: f64,
    pub eta: Vec<Field>,
    pub xi: Vec<Field>,
}

impl FrozenPair {
    pub fn new(dt: f64, eta: Vec<Field>, xi: Vec<Field>) -> Result<Self> {
        if eta.len() != xi.len() || eta.is_empty() {
            return Err(invalid(
                "frozen pair needs equally many, and at least one, η and ξ fields",
            ));
        }
        Ok(Self { dt, eta, xi })
    }

    /// Pair that is zero at every grid time.
    pub fn zero(dt: f64, steps: usize, template: &Field) -> Self {
        let z = template.map(|_| 0.0);
        Self {
            dt,
            eta: vec![z.clone(); steps + 1],
            xi: vec![z; steps + 1],
        }
    }

    pub fn steps(&self) -> usize {
        self.eta.len() - 1
    }

    /// Values of `h(η,ξ,t_n)` for `n = 0..=steps`.
    pub fn h_series(&self, params: &CutoffParams) -> Vec<f64> {
        let mut acc = HAccumulator::new(params);
        let mut out = Vec::with_capacity(self.eta.len());
        out.push(acc.value());
        for (e, x) in self.eta.iter().zip(&self.xi).take(self.steps()) {
            acc.push(e, x, self.dt);
            out.push(acc.value());
        }
        out
    }

    /// Is any entry of either field negative?
    pub fn has_negative(&self) -> bool {
        self.eta.iter().chain(&self.xi).any(|f| f.min() < 0.0)
    }
}

/// `h(η,ξ,t)` for a grid time `t`.
pub fn h_functional(pair: &FrozenPair, t: f64, params: &CutoffParams) -> Result<f64> {
    let pos = t / pair.dt;
    let n = pos.round();
    if !(n >= 0.0) || (pos - n).abs() > 1e-9 * pos.max(1.0) || n as usize > pair.steps() {
        return Err(invalid(format!(
            "t = {t} is not on the time grid of the pair"
        )));
    }
    let mut acc = HAccumulator::new(params);
    for i in 0..n as usize {
        acc.push(&pair.eta[i], &pair.xi[i], pair.dt);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(gamma: f64, m0: f64, nu: f64) -> CutoffParams {
        CutoffParams {
            kappa: 1.0,
            nu,
            gamma,
            m: 6.0,
            m0,
            p0_star: 8.0,
        }
    }

    #[test]
    fn phi_plateau_and_support() {
        for kappa in [0.5, 1.0, 3.0] {
            assert_eq!(cutoff_phi(0.0, kappa).unwrap(), 1.0);
            assert_eq!(cutoff_phi(kappa, kappa).unwrap(), 1.0);
            assert_eq!(cutoff_phi(-kappa, kappa).unwrap(), 1.0);
            assert_eq!(cutoff_phi(2.0 * kappa, kappa).unwrap(), 0.0);
            assert_eq!(cutoff_phi(5.0 * kappa, kappa).unwrap(), 0.0);
            let mid = cutoff_phi(1.5 * kappa, kappa).unwrap();
            assert!(mid > 0.0 && mid < 1.0);
        }
        assert!(cutoff_phi(1.0, 0.0).is_err());
        assert!(cutoff_phi(1.0, -1.0).is_err());
    }

    #[test]
    fn phi_lipschitz_bound_and_monotone() {
        for kappa in [0.25, 1.0, 4.0] {
            let h = 1e-5 * kappa;
            let mut prev = 1.0;
            let mut max_slope: f64 = 0.0;
            let mut x = 0.9 * kappa;
            while x < 2.1 * kappa {
                let a = cutoff_phi(x, kappa).unwrap();
                let b = cutoff_phi(x + h, kappa).unwrap();
                max_slope = max_slope.max((b - a).abs() / h);
                assert!(a <= prev + 1e-15);
                prev = a;
                x += h;
            }
            assert!(max_slope <= 2.0 / kappa + 1e-3, "κ={kappa}: {max_slope}");
            assert!(max_slope >= 1.99 / kappa);
        }
    }

    #[test]
    fn default_nu_is_largest_admissible() {
        let p = CutoffParams::new(1.0, 3.0, 6.0, 12.0, 8.0).unwrap();
        assert_abs_diff_eq!(p.nu, 7.0 / 8.0 * 4.0 / 12.0, epsilon = 1e-15);
        assert!(p.with_nu(p.nu * 1.01).is_err());
        assert!(p.with_nu(p.nu * 0.5).is_ok());
        assert!(p.with_nu(0.0).is_err());
        // both constraints slack: ν capped at 1
        assert_eq!(max_admissible_nu(3.0, 2.0, 4.0), 1.0);
    }

    #[test]
    fn h_examples() {
        let z = Field::zeros(1, 8);
        let one = Field::constant(1, 8, 1.0);
        let zero_pair = FrozenPair::zero(0.1, 10, &z);
        for n in 0..=10 {
            assert_eq!(
                h_functional(&zero_pair, n as f64 * 0.1, &params(2.0, 4.0, 1.0)).unwrap(),
                0.0
            );
        }
        let pair = FrozenPair::new(0.05, vec![one.clone(); 21], vec![z.clone(); 21]).unwrap();
        assert_abs_diff_eq!(
            h_functional(&pair, 0.5, &params(2.0, 4.0, 1.0)).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        let pair = FrozenPair::new(0.05, vec![one.clone(); 21], vec![one; 21]).unwrap();
        assert_abs_diff_eq!(
            h_functional(&pair, 1.0, &params(2.0, 4.0, 0.5)).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_eq!(
            h_functional(&pair, 0.0, &params(2.0, 4.0, 0.5)).unwrap(),
            0.0
        );
        assert!(h_functional(&pair, 0.53, &params(2.0, 4.0, 0.5)).is_err());
        assert!(h_functional(&pair, 1.5, &params(2.0, 4.0, 0.5)).is_err());
    }

    #[test]
    fn h_nondecreasing() {
        let fields: Vec<Field> = (0..30)
            .map(|i| {
                Field::from_values(1, 8, (0..8).map(|j| ((i * j) as f64).sin()).collect()).unwrap()
            })
            .collect();
        let pair =
            FrozenPair::new(0.01, fields.clone(), fields.into_iter().rev().collect()).unwrap();
        let h = pair.h_series(&params(3.0, 12.0, 0.29));
        assert_eq!(h[0], 0.0);
        assert!(h.windows(2).all(|w| w[1] >= w[0]));
    }
}
