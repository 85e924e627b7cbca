//! Laplacian eigenbasis on the unit cube `[0,1]^d`.
//!
//! Eigenfunctions are tensor products of one-dimensional trigonometric
//! modes sampled on a uniform grid:
//!
//! * periodic: `1`, `√2 sin(2πkx)` (k ≥ 1) and `√2 cos(2π|k|x)` (k ≤ −1), on
//!   the nodes `x_j = j/N`, eigenvalue `4π²k²`;
//! * Neumann: `1`, `√2 cos(πkx)` (k ≥ 1), on the cell centres
//!   `x_j = (j + 1/2)/N`, eigenvalue `π²k²`.
//!
//! Retained modes are sorted by eigenvalue with ties broken by the
//! lexicographic order of the signed multi-index, so the mode numbering is
//! identical across runs. Transforms use the rectangle rule at the grid
//! nodes, under which the trigonometric modes are exactly orthonormal.
//!
//! The periodic Nyquist frequency is not part of the mode set; a periodic
//! axis therefore resolves `N − 1` modes and a Neumann axis `N`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Neumann,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::Periodic => "periodic",
            Boundary::Neumann => "neumann",
        }
    }
}

/// One retained eigenmode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Signed frequency per axis (unused axes are 0).
    pub index: [i32; 3],
    pub eigenvalue: f64,
    /// Eigenvalue of the second-difference stencil for the same grid vector.
    pub stencil_eigenvalue: f64,
    /// Position in the full separable coefficient box.
    box_offset: usize,
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    dim: usize,
    boundary: Boundary,
    n: usize,
    modes: Vec<Mode>,
    /// One-dimensional mode table, `rows × n`, row `r` holds frequency `row_freq[r]`.
    table: Vec<f64>,
    row_freq: Vec<i32>,
    /// Retained row indices in basis order (one-dimensional fast path).
    rows_1d: Vec<usize>,
}

impl SpectralBasis {
    /// Number of modes a single axis resolves on `n` grid points.
    pub fn modes_per_axis(boundary: Boundary, n: usize) -> usize {
        match boundary {
            Boundary::Periodic => n - 1,
            Boundary::Neumann => n,
        }
    }

    /// Total number of modes resolvable in dimension `dim` with `n` points per axis.
    pub fn resolvable_modes(dim: usize, boundary: Boundary, n: usize) -> usize {
        Self::modes_per_axis(boundary, n).pow(dim as u32)
    }

    pub fn new(dim: usize, boundary: Boundary, n: usize, modes: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(invalid(format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        if n < 8 {
            return Err(invalid(format!(
                "grid needs at least 8 points per axis (got {n})"
            )));
        }
        if !n.is_power_of_two() {
            return Err(invalid(format!(
                "grid size must be a power of two (got {n})"
            )));
        }
        let total = Self::resolvable_modes(dim, boundary, n);
        if modes == 0 || modes > total {
            return Err(invalid(format!(
                "mode count {modes} outside 1..={total} resolvable on a {n}-point {} grid",
                boundary.name()
            )));
        }

        let row_freq: Vec<i32> = match boundary {
            Boundary::Periodic => {
                let half = (n / 2) as i32;
                (-(half - 1)..half).collect()
            }
            Boundary::Neumann => (0..n as i32).collect(),
        };
        let rows = row_freq.len();
        let sines = symmetric_sines(4 * n);
        let mut table = vec![0.0; rows * n];
        for (r, &k) in row_freq.iter().enumerate() {
            for j in 0..n {
                table[r * n + j] = mode_on_grid(boundary, k, j, &sines);
            }
        }
        let row_of = |k: i32| -> usize {
            match boundary {
                Boundary::Periodic => (k + (n / 2) as i32 - 1) as usize,
                Boundary::Neumann => k as usize,
            }
        };

        // Enumerate the full box, then keep the lowest `modes` by (|k|², index).
        let mut all: Vec<([i32; 3], i64)> = (0..total)
            .map(|flat| {
                let mut k = [0i32; 3];
                let mut rest = flat;
                for a in (0..dim).rev() {
                    k[a] = row_freq[rest % rows];
                    rest /= rows;
                }
                let sq = k.iter().map(|&c| (c as i64) * (c as i64)).sum();
                (k, sq)
            })
            .collect();
        all.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(modes);

        let h = 1.0 / n as f64;
        let scale = match boundary {
            Boundary::Periodic => 4.0 * PI * PI,
            Boundary::Neumann => PI * PI,
        };
        let modes: Vec<Mode> = all
            .into_iter()
            .map(|(k, sq)| {
                let mut offset = 0;
                let mut stencil = 0.0;
                for &ka in k.iter().take(dim) {
                    offset = offset * rows + row_of(ka);
                    let arg = match boundary {
                        Boundary::Periodic => PI * ka.unsigned_abs() as f64 * h,
                        Boundary::Neumann => 0.5 * PI * ka as f64 * h,
                    };
                    stencil += 4.0 / (h * h) * arg.sin().powi(2);
                }
                Mode {
                    index: k,
                    eigenvalue: scale * sq as f64,
                    stencil_eigenvalue: stencil,
                    box_offset: offset,
                }
            })
            .collect();
        let rows_1d = if dim == 1 {
            modes.iter().map(|m| m.box_offset).collect()
        } else {
            Vec::new()
        };

        Ok(Self {
            dim,
            boundary,
            n,
            modes,
            table,
            row_freq,
            rows_1d,
        })
    }

    /// Basis retaining every resolvable mode.
    pub fn full(dim: usize, boundary: Boundary, n: usize) -> Result<Self> {
        Self::new(dim, boundary, n, Self::resolvable_modes(dim, boundary, n))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn grid_len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Mesh spacing `1/N`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Quadrature weight `h^d` of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.eigenvalue)
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.modes[k].eigenvalue
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.dim, self.n)
    }

    /// Coordinates of the flat grid index `i` (row-major, last axis fastest).
    pub fn coords(&self, mut i: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in (0..self.dim).rev() {
            x[a] = grid_coord(self.boundary, self.n, i % self.n);
            i /= self.n;
        }
        x
    }

    /// Field sampled from a closure of the coordinates.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Field {
        let values = (0..self.grid_len()).map(|i| f(self.coords(i))).collect();
        Field::from_values(self.dim, self.n, values).expect("sampled field has grid length")
    }

    /// Grid samples of eigenfunction `k`.
    pub fn eigenfunction(&self, k: usize) -> Field {
        let mut c = vec![0.0; self.len()];
        c[k] = 1.0;
        self.synthesize(&c).expect("unit vector has basis length")
    }

    /// Exact supremum of `|ψ_k|` over the continuous domain.
    pub fn sup_norm(&self, k: usize) -> f64 {
        let nonzero = self.modes[k].index[..self.dim]
            .iter()
            .filter(|&&c| c != 0)
            .count();
        SQRT_2.powi(nonzero as i32)
    }

    fn check(&self, field: &Field) -> Result<()> {
        if field.dim() != self.dim || field.n() != self.n {
            return Err(Error::ShapeMismatch {
                expected: self.grid_len(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Coefficients `⟨f, ψ_k⟩` for every retained mode.
    pub fn analyze(&self, field: &Field) -> Result<Vec<f64>> {
        self.check(field)?;
        let n = self.n;
        let w = self.spacing();
        let f = field.values();
        if self.dim == 1 {
            return Ok(self
                .rows_1d
                .iter()
                .map(|&r| {
                    let row = &self.table[r * n..(r + 1) * n];
                    w * row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect());
        }
        let rows = self.row_freq.len();
        let mut data = f.to_vec();
        let mut shape = vec![n; self.dim];
        for axis in 0..self.dim {
            data = transform_axis(&data, &shape, axis, rows, |r, j| w * self.table[r * n + j]);
            shape[axis] = rows;
        }
        Ok(self.modes.iter().map(|m| data[m.box_offset]).collect())
    }

    /// `Σ_k c_k ψ_k` on the grid; `coeffs` may be shorter than the basis.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Field> {
        if coeffs.len() > self.len() {
            return Err(invalid(format!(
                "{} coefficients exceed the {} retained modes",
                coeffs.len(),
                self.len()
            )));
        }
        let n = self.n;
        if self.dim == 1 {
            let mut out = vec![0.0; n];
            for (&r, &c) in self.rows_1d.iter().zip(coeffs) {
                if c == 0.0 {
                    continue;
                }
                let row = &self.table[r * n..(r + 1) * n];
                for (o, &p) in out.iter_mut().zip(row) {
                    *o += c * p;
                }
            }
            return Field::from_values(1, n, out);
        }
        let rows = self.row_freq.len();
        let mut data = vec![0.0; rows.pow(self.dim as u32)];
        for (m, &c) in self.modes.iter().zip(coeffs) {
            data[m.box_offset] = c;
        }
        let mut shape = vec![rows; self.dim];
        for axis in 0..self.dim {
            data = transform_axis(&data, &shape, axis, n, |j, r| self.table[r * n + j]);
            shape[axis] = n;
        }
        Field::from_values(self.dim, n, data)
    }

    /// Orthogonal projection onto the retained modes.
    pub fn project(&self, field: &Field) -> Result<Field> {
        self.synthesize(&self.analyze(field)?)
    }

    /// Spectral Laplacian: mode `k` is multiplied by `−ν_k`.
    pub fn apply_laplacian(&self, field: &Field) -> Result<Field> {
        let mut c = self.analyze(field)?;
        for (ck, m) in c.iter_mut().zip(&self.modes) {
            *ck *= -m.eigenvalue;
        }
        self.synthesize(&c)
    }

    /// `#{j : ν_j ≤ λ}` over the retained modes.
    pub fn weyl_count(&self, lambda: f64) -> usize {
        self.modes.partition_point(|m| m.eigenvalue <= lambda)
    }

    /// Smallest `C` with `weyl_count(λ) ≤ C λ^{d/2}` for every retained
    /// eigenvalue `λ ≥ ν_1`. `None` when only the constant mode is kept.
    pub fn weyl_constant(&self) -> Option<f64> {
        let half_d = self.dim as f64 / 2.0;
        self.modes
            .iter()
            .map(|m| m.eigenvalue)
            .filter(|&l| l > 0.0)
            .map(|l| self.weyl_count(l) as f64 / l.powf(half_d))
            .reduce(f64::max)
    }

    /// Smallest `C` with `sup|ψ_k| ≤ C ν_k^{(d−1)/2}` for every retained `k ≥ 1`.
    pub fn sup_norm_constant(&self) -> Option<f64> {
        let e = (self.dim as f64 - 1.0) / 2.0;
        (1..self.len())
            .map(|k| self.sup_norm(k) / self.eigenvalue(k).powf(e))
            .reduce(f64::max)
    }
}

fn grid_coord(boundary: Boundary, n: usize, j: usize) -> f64 {
    match boundary {
        Boundary::Periodic => j as f64 / n as f64,
        Boundary::Neumann => (j as f64 + 0.5) / n as f64,
    }
}

/// `sin(2πm/len)` for `m < len` (`len` divisible by 4), built from the first
/// quadrant so that symmetric entries agree exactly.
fn symmetric_sines(len: usize) -> Vec<f64> {
    let quarter = len / 4;
    let mut s = vec![0.0; len];
    for (m, x) in s.iter_mut().enumerate().take(quarter + 1) {
        *x = (2.0 * PI * m as f64 / len as f64).sin();
    }
    for m in quarter + 1..=2 * quarter {
        s[m] = s[2 * quarter - m];
    }
    for m in 2 * quarter + 1..len {
        s[m] = -s[m - 2 * quarter];
    }
    s
}

/// One-dimensional mode `k` at node `j`. Phases are reduced in integer
/// arithmetic and looked up in `sines`, a table of period `4n`.
fn mode_on_grid(boundary: Boundary, k: i32, j: usize, sines: &[f64]) -> f64 {
    let a = k.unsigned_abs() as usize;
    let len = sines.len();
    let cos = |m: usize| sines[(m + len / 4) % len];
    match (boundary, k) {
        (_, 0) => 1.0,
        (Boundary::Periodic, k) if k > 0 => SQRT_2 * sines[(4 * a * j) % len],
        (Boundary::Periodic, _) => SQRT_2 * cos((4 * a * j) % len),
        // cos(πk(2j+1)/(2n)) = cos(2π·k(2j+1)/(4n))
        (Boundary::Neumann, _) => SQRT_2 * cos((a * (2 * j + 1)) % len),
    }
}

/// Contract `data` (row-major with `shape`) along `axis` with a matrix
/// given entrywise by `coef(out_index, in_index)`.
fn transform_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    out_len: usize,
    coef: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let before: usize = shape[..axis].iter().product();
    let after: usize = shape[axis + 1..].iter().product();
    let in_len = shape[axis];
    let mut out = vec![0.0; before * out_len * after];
    for a in 0..before {
        for o in 0..out_len {
            let dst = &mut out[(a * out_len + o) * after..(a * out_len + o + 1) * after];
            for i in 0..in_len {
                let c = coef(o, i);
                if c == 0.0 {
                    continue;
                }
                let src = &data[(a * in_len + i) * after..(a * in_len + i + 1) * after];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
    }
    out
}
