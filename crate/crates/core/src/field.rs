//! Grid fields on `[0,1]^d` and the pointwise/integral operations the
//! dynamics and diagnostics are built from.

use serde::{Deserialize, Serialize};

use crate::basis::{Boundary, SpectralBasis};
use crate::error::{invalid, Error, Result};

/// Real values on an `N^d` grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    dim: usize,
    n: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            dim,
            n,
            values: vec![0.0; n.pow(dim as u32)],
        }
    }

    pub fn constant(dim: usize, n: usize, c: f64) -> Self {
        Self {
            dim,
            n,
            values: vec![c; n.pow(dim as u32)],
        }
    }

    pub fn from_values(dim: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        let expected = n.pow(dim as u32);
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { dim, n, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell_volume(&self) -> f64 {
        (1.0 / self.n as f64).powi(self.dim as i32)
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.dim == other.dim && self.n == other.n
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            dim: self.dim,
            n: self.n,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.same_shape(other));
        Field {
            dim: self.dim,
            n: self.n,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert!(self.same_shape(x));
        for (s, &v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// Grid inner product `h^d Σ f_i g_i`.
    pub fn inner(&self, other: &Field) -> f64 {
        debug_assert!(self.same_shape(other));
        self.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Rectangle-rule integral over the domain.
    pub fn integral(&self) -> f64 {
        self.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        debug_assert!(self.same_shape(other));
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Discrete L² norm; never fails, unlike the general [`lp_norm`].
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Second-difference Laplacian. Periodic axes wrap; Neumann axes use a
    /// mirrored ghost cell, so the stencil annihilates constants and sums to
    /// zero over the grid in both cases.
    pub fn stencil_laplacian(&self, boundary: Boundary) -> Field {
        let mut out = vec![0.0; self.len()];
        self.stencil_laplacian_into(boundary, &mut out);
        Field {
            dim: self.dim,
            n: self.n,
            values: out,
        }
    }

    pub(crate) fn stencil_laplacian_into(&self, boundary: Boundary, out: &mut [f64]) {
        let n = self.n;
        let inv_h2 = (n * n) as f64;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut stride = 1;
        for _axis in (0..self.dim).rev() {
            for (i, o) in out.iter_mut().enumerate() {
                let j = (i / stride) % n;
                let here = self.values[i];
                let left = if j > 0 {
                    self.values[i - stride]
                } else {
                    match boundary {
                        Boundary::Periodic => self.values[i + (n - 1) * stride],
                        Boundary::Neumann => here,
                    }
                };
                let right = if j + 1 < n {
                    self.values[i + stride]
                } else {
                    match boundary {
                        Boundary::Periodic => self.values[i - (n - 1) * stride],
                        Boundary::Neumann => here,
                    }
                };
                *o += (left - 2.0 * here + right) * inv_h2;
            }
            stride *= n;
        }
    }

    /// `|∇f|²` by centred differences; one-sided at Neumann walls.
    pub fn gradient_squared(&self, boundary: Boundary) -> Field {
        let n = self.n;
        let inv_h = n as f64;
        let mut out = vec![0.0; self.len()];
        let mut stride = 1;
        for _axis in (0..self.dim).rev() {
            for (i, o) in out.iter_mut().enumerate() {
                let j = (i / stride) % n;
                let g = match boundary {
                    Boundary::Periodic => {
                        let l = if j > 0 {
                            i - stride
                        } else {
                            i + (n - 1) * stride
                        };
                        let r = if j + 1 < n {
                            i + stride
                        } else {
                            i - (n - 1) * stride
                        };
                        0.5 * (self.values[r] - self.values[l]) * inv_h
                    }
                    Boundary::Neumann => {
                        if j == 0 {
                            (self.values[i + stride] - self.values[i]) * inv_h
                        } else if j + 1 == n {
                            (self.values[i] - self.values[i - stride]) * inv_h
                        } else {
                            0.5 * (self.values[i + stride] - self.values[i - stride]) * inv_h
                        }
                    }
                };
                *o += g * g;
            }
            stride *= n;
        }
        Field {
            dim: self.dim,
            n: self.n,
            values: out,
        }
    }
}

/// Signed power `z^{[γ]} = |z|^{γ−1} z`.
#[inline]
pub fn signed_pow(z: f64, gamma: f64) -> f64 {
    if gamma == 3.0 {
        z * z * z
    } else if gamma == 2.0 {
        z * z.abs()
    } else {
        z.abs().powf(gamma - 1.0) * z
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "porous-medium exponent must exceed 1 (got {gamma})"
        )))
    }
}

/// Pointwise `|z|^{γ−1} z`.
pub fn power_gamma(field: &Field, gamma: f64) -> Result<Field> {
    check_gamma(gamma)?;
    Ok(field.map(|z| signed_pow(z, gamma)))
}

/// `(h^d Σ |z_i|^p)^{1/p}`.
pub fn lp_norm(field: &Field, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid(format!("Lp norm needs p >= 1 (got {p})")));
    }
    Ok(lp_norm_unchecked(field, p))
}

pub(crate) fn lp_norm_unchecked(field: &Field, p: f64) -> f64 {
    lp_power_sum(field, p).powf(1.0 / p)
}

/// `h^d Σ |z_i|^p`, the p-th power of the Lp norm.
pub(crate) fn lp_power_sum(field: &Field, p: f64) -> f64 {
    let sum: f64 = if p == 2.0 {
        field.values().iter().map(|z| z * z).sum()
    } else if p == 4.0 {
        field.values().iter().map(|z| (z * z) * (z * z)).sum()
    } else {
        field.values().iter().map(|z| z.abs().powf(p)).sum()
    };
    field.cell_volume() * sum
}

/// Spectral Sobolev norm together with the part of the field the basis
/// cannot represent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevNorm {
    pub value: f64,
    /// L² norm of `f − P_K f`.
    pub projection_residual: f64,
}

/// `(Σ_k (1+ν_k)^s |ĉ_k|²)^{1/2}` over the retained modes, `s ∈ [−2, 2]`.
pub fn sobolev_norm(basis: &SpectralBasis, field: &Field, s: f64) -> Result<SobolevNorm> {
    if !(-2.0..=2.0).contains(&s) {
        return Err(invalid(format!(
            "Sobolev order {s} outside the validated range [-2, 2]"
        )));
    }
    let c = basis.analyze(field)?;
    let value = sobolev_from_coefficients(basis, &c, s);
    let mut residual = field.clone();
    residual.axpy(-1.0, &basis.synthesize(&c)?);
    Ok(SobolevNorm {
        value,
        projection_residual: residual.l2_norm(),
    })
}

pub(crate) fn sobolev_from_coefficients(basis: &SpectralBasis, coeffs: &[f64], s: f64) -> f64 {
    coeffs
        .iter()
        .zip(basis.eigenvalues())
        .map(|(c, nu)| (1.0 + nu).powf(s) * c * c)
        .sum::<f64>()
        .sqrt()
}

/// `(x^{[γ]} − y^{[γ]})(x − y) − 2^{1−γ}|x − y|^{γ+1}`; nonnegative for every
/// `γ > 1` up to rounding.
pub fn pm_inequality_gap(x: f64, y: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let lhs = (signed_pow(x, gamma) - signed_pow(y, gamma)) * (x - y);
    let rhs = 2f64.powf(1.0 - gamma) * (x - y).abs().powf(gamma + 1.0);
    Ok(lhs - rhs)
}
