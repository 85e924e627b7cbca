//! Implicit porous-medium step `u⁺ − Δt r_u Δ_h (u⁺)^{[γ]} = b`.
//!
//! `Δ_h` is the conservative second-difference stencil, which keeps the
//! discrete problem monotone (comparison principle, nonnegativity) and mass
//! conserving. Newton runs in the variable `u` with Jacobian
//! `I − Δt r_u Δ_h diag(γ|u|^{γ−1} + ε)`. In one dimension the Jacobian is
//! (cyclic) tridiagonal and is solved directly; in higher dimensions the
//! symmetrised system is solved by conjugate gradients preconditioned with
//! the constant-coefficient operator, which is diagonal in the eigenbasis.

use crate::basis::{Boundary, SpectralBasis};
use crate::error::{Error, Result};
use crate::field::{signed_pow, Field};

/// Diagonal regularisation of the degenerate Jacobian at `u = 0`.
pub const JACOBIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) struct PorousSolver<'a> {
    pub basis: &'a SpectralBasis,
    /// Complete basis for the spectral preconditioner (`d ≥ 2` only).
    pub full: Option<SpectralBasis>,
    pub gamma: f64,
    pub settings: NewtonSettings,
}

impl<'a> PorousSolver<'a> {
    pub fn new(basis: &'a SpectralBasis, gamma: f64, settings: NewtonSettings) -> Result<Self> {
        let full = if basis.dim() > 1 {
            Some(SpectralBasis::full(
                basis.dim(),
                basis.boundary(),
                basis.n(),
            )?)
        } else {
            None
        };
        Ok(Self {
            basis,
            full,
            gamma,
            settings,
        })
    }

    fn residual(&self, x: &Field, b: &Field, c: f64, scratch: &mut [f64]) -> Field {
        let w = x.map(|z| signed_pow(z, self.gamma));
        w.stencil_laplacian_into(self.basis.boundary(), scratch);
        let mut r = x.clone();
        for ((ri, bi), li) in r
            .values_mut()
            .iter_mut()
            .zip(b.values())
            .zip(scratch.iter())
        {
            *ri -= bi + c * li;
        }
        r
    }

    /// Solves `x − c Δ_h x^{[γ]} = b`; `scale` sets the residual tolerance
    /// `tol · (1 + scale)`.
    pub fn solve(&self, b: &Field, c: f64, scale: f64) -> Result<(Field, NewtonReport)> {
        if c == 0.0 {
            return Ok((
                b.clone(),
                NewtonReport {
                    iterations: 0,
                    residual: 0.0,
                },
            ));
        }
        let target = self.settings.tol * (1.0 + scale);
        let mut scratch = vec![0.0; b.len()];
        let mut x = b.clone();
        let mut r = self.residual(&x, b, c, &mut scratch);
        let mut rn = r.l2_norm();
        for it in 0..=self.settings.max_iter {
            if !rn.is_finite() {
                break;
            }
            if rn <= target {
                return Ok((
                    x,
                    NewtonReport {
                        iterations: it,
                        residual: rn,
                    },
                ));
            }
            if it == self.settings.max_iter {
                break;
            }
            let diag: Vec<f64> = x
                .values()
                .iter()
                .map(|&z| self.gamma * z.abs().powf(self.gamma - 1.0) + JACOBIAN_FLOOR)
                .collect();
            let rhs: Vec<f64> = r.values().iter().map(|v| -v).collect();
            let delta = self.linear_solve(&diag, c, &rhs);

            let mut alpha = 1.0;
            loop {
                let mut trial = x.clone();
                for (t, d) in trial.values_mut().iter_mut().zip(&delta) {
                    *t += alpha * d;
                }
                let tr = self.residual(&trial, b, c, &mut scratch);
                let tn = tr.l2_norm();
                if tn < (1.0 - 1e-4 * alpha) * rn || alpha < 1.0 / 1024.0 {
                    x = trial;
                    r = tr;
                    rn = tn;
                    break;
                }
                alpha *= 0.5;
            }
        }
        Err(Error::NewtonDivergence {
            iterations: self.settings.max_iter,
            residual: rn,
        })
    }

    /// Solves `(I − c Δ_h diag(d)) δ = rhs`.
    fn linear_solve(&self, diag: &[f64], c: f64, rhs: &[f64]) -> Vec<f64> {
        if self.basis.dim() == 1 {
            self.solve_1d(diag, c, rhs)
        } else {
            self.solve_pcg(diag, c, rhs)
        }
    }

    fn solve_1d(&self, diag: &[f64], c: f64, rhs: &[f64]) -> Vec<f64> {
        let n = diag.len();
        let k = c * (n * n) as f64;
        let mut sub = vec![0.0; n];
        let mut main = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            let left = if i > 0 { i - 1 } else { n - 1 };
            let right = if i + 1 < n { i + 1 } else { 0 };
            main[i] = 1.0 + 2.0 * k * diag[i];
            sub[i] = -k * diag[left];
            sup[i] = -k * diag[right];
        }
        match self.basis.boundary() {
            Boundary::Neumann => {
                // mirrored ghost cell folds the missing neighbour onto the diagonal
                main[0] -= k * diag[0];
                main[n - 1] -= k * diag[n - 1];
                sub[0] = 0.0;
                sup[n - 1] = 0.0;
                solve_tridiagonal(&sub, &main, &sup, rhs)
            }
            Boundary::Periodic => {
                let corner_bottom = sup[n - 1];
                let corner_top = sub[0];
                sub[0] = 0.0;
                sup[n - 1] = 0.0;
                solve_cyclic(&sub, &main, &sup, corner_bottom, corner_top, rhs)
            }
        }
    }

    /// `(I + A D) δ = r` with `A = −c Δ_h` symmetric positive semidefinite.
    /// With `z = D^{1/2} δ` this becomes `(I + S A S) z = S r`, `S = D^{1/2}`,
    /// and `δ = r − A S z`.
    fn solve_pcg(&self, diag: &[f64], c: f64, rhs: &[f64]) -> Vec<f64> {
        let boundary = self.basis.boundary();
        let (dim, n) = (self.basis.dim(), self.basis.n());
        let s: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
        let mean_d = diag.iter().sum::<f64>() / diag.len() as f64;
        let full = self.full.as_ref().expect("preconditioner basis");
        let max_mu = full
            .modes()
            .iter()
            .map(|m| m.stencil_eigenvalue)
            .fold(0.0, f64::max);

        let mut scratch = vec![0.0; rhs.len()];
        let mut apply_a = |v: &[f64], out: &mut [f64]| {
            let f = Field::from_values(dim, n, v.to_vec()).expect("grid length");
            f.stencil_laplacian_into(boundary, &mut scratch);
            for (o, l) in out.iter_mut().zip(scratch.iter()) {
                *o = -c * l;
            }
        };
        let precondition = |v: &[f64]| -> Vec<f64> {
            let f = Field::from_values(dim, n, v.to_vec()).expect("grid length");
            let mut coeffs = full.analyze(&f).expect("grid length");
            let projected = full.synthesize(&coeffs).expect("basis length");
            for (ck, m) in coeffs.iter_mut().zip(full.modes()) {
                *ck /= 1.0 + mean_d * c * m.stencil_eigenvalue;
            }
            let mut out = full
                .synthesize(&coeffs)
                .expect("basis length")
                .into_values();
            // the periodic Nyquist remainder is not in the mode set
            let tail = 1.0 / (1.0 + mean_d * c * max_mu);
            for ((o, vi), pi) in out.iter_mut().zip(v).zip(projected.values()) {
                *o += tail * (vi - pi);
            }
            out
        };

        let len = rhs.len();
        let b: Vec<f64> = rhs.iter().zip(&s).map(|(r, si)| r * si).collect();
        let bnorm = dot(&b, &b).sqrt();
        let mut z = vec![0.0; len];
        if bnorm == 0.0 {
            return rhs.to_vec();
        }
        let mut res = b.clone();
        let mut pre = precondition(&res);
        let mut p = pre.clone();
        let mut rz = dot(&res, &pre);
        let mut tmp = vec![0.0; len];
        let mut ap = vec![0.0; len];
        for _ in 0..1000 {
            // ap = (I + S A S) p
            let sp: Vec<f64> = p.iter().zip(&s).map(|(a, b)| a * b).collect();
            apply_a(&sp, &mut tmp);
            for i in 0..len {
                ap[i] = p[i] + s[i] * tmp[i];
            }
            let alpha = rz / dot(&p, &ap);
            for i in 0..len {
                z[i] += alpha * p[i];
                res[i] -= alpha * ap[i];
            }
            if dot(&res, &res).sqrt() <= 1e-14 * bnorm {
                break;
            }
            pre = precondition(&res);
            let rz_new = dot(&res, &pre);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = pre[i] + beta * p[i];
            }
        }
        let sz: Vec<f64> = z.iter().zip(&s).map(|(a, b)| a * b).collect();
        apply_a(&sz, &mut tmp);
        rhs.iter().zip(&tmp).map(|(r, t)| r - t).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thomas algorithm; `sub[0]` and `sup[n−1]` are ignored.
pub(crate) fn solve_tridiagonal(sub: &[f64], main: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = main.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = main[0];
    x[0] = rhs[0] / beta;
    for i in 1..n {
        c[i] = sup[i - 1] / beta;
        beta = main[i] - sub[i] * c[i];
        x[i] = (rhs[i] - sub[i] * x[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i + 1] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve (Sherman–Morrison); `bottom = A[n−1][0]`,
/// `top = A[0][n−1]`.
pub(crate) fn solve_cyclic(
    sub: &[f64],
    main: &[f64],
    sup: &[f64],
    bottom: f64,
    top: f64,
    rhs: &[f64],
) -> Vec<f64> {
    let n = main.len();
    let g = -main[0];
    let mut mm = main.to_vec();
    mm[0] -= g;
    mm[n - 1] -= bottom * top / g;
    let x = solve_tridiagonal(sub, &mm, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = g;
    u[n - 1] = bottom;
    let z = solve_tridiagonal(sub, &mm, sup, &u);
    let fact = (x[0] + top * x[n - 1] / g) / (1.0 + z[0] + top * z[n - 1] / g);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(
        n: usize,
        sub: &[f64],
        main: &[f64],
        sup: &[f64],
        bottom: f64,
        top: f64,
        x: &[f64],
    ) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut s = main[i] * x[i];
                if i > 0 {
                    s += sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += sup[i] * x[i + 1];
                }
                if i == 0 {
                    s += top * x[n - 1];
                }
                if i == n - 1 {
                    s += bottom * x[0];
                }
                s
            })
            .collect()
    }

    #[test]
    fn cyclic_solver_inverts_the_matrix() {
        let n = 9;
        let sub: Vec<f64> = (0..n).map(|i| -0.3 - 0.01 * i as f64).collect();
        let sup: Vec<f64> = (0..n).map(|i| -0.2 + 0.02 * i as f64).collect();
        let main: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_cyclic(&sub, &main, &sup, -0.4, -0.25, &rhs);
        let back = dense_mul(n, &sub, &main, &sup, -0.4, -0.25, &x);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
        let y = solve_tridiagonal(&sub, &main, &sup, &rhs);
        let back = dense_mul(n, &sub, &main, &sup, 0.0, 0.0, &y);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
