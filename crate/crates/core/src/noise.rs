//! Two independent Q-Wiener channels expanded in the Laplacian eigenbasis,
//! `W_j(t) = Σ_k λ_k^{(j)} ψ_k β_k^{(j)}(t)`.
//!
//! Every Brownian increment is addressed by `(seed, path, rung, channel,
//! mode, step)`. The first three select a ChaCha8 key, `(channel, mode)`
//! selects the stream and `step` the word position, so any increment can be
//! regenerated without replaying the ones before it and paths can be
//! sampled in any order or in parallel.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::SpectralBasis;
use crate::error::{invalid, Result};
use crate::field::Field;
use crate::stats::Estimate;

/// One noise channel: `λ_k = C (1 + ν_k)^{−δ}` unless an explicit spectrum
/// is supplied, in which case it is only checked against `C ν_k^{−δ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
}

fn default_delta() -> f64 {
    1.0
}

fn default_amplitude() -> f64 {
    0.1
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            amplitude: default_amplitude(),
            spectrum: None,
        }
    }
}

impl ChannelSpec {
    pub fn new(delta: f64, amplitude: f64) -> Self {
        Self {
            delta,
            amplitude,
            spectrum: None,
        }
    }

    pub fn silent() -> Self {
        Self::new(1.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub channel1: ChannelSpec,
    #[serde(default)]
    pub channel2: ChannelSpec,
}

impl NoiseSpec {
    pub fn new(channel1: ChannelSpec, channel2: ChannelSpec) -> Self {
        Self { channel1, channel2 }
    }

    pub fn channel(&self, j: usize) -> &ChannelSpec {
        match j {
            1 => &self.channel1,
            2 => &self.channel2,
            _ => panic!("noise channels are numbered 1 and 2"),
        }
    }

    /// `λ_k^{(j)}` for every retained mode.
    pub fn spectrum(&self, basis: &SpectralBasis, j: usize) -> Vec<f64> {
        let ch = self.channel(j);
        match &ch.spectrum {
            Some(s) => (0..basis.len())
                .map(|k| s.get(k).copied().unwrap_or(0.0))
                .collect(),
            None => basis
                .eigenvalues()
                .map(|nu| ch.amplitude * (1.0 + nu).powf(-ch.delta))
                .collect(),
        }
    }
}

/// `Σ_k λ_k²` over the retained modes.
pub fn trace(spectrum: &[f64]) -> f64 {
    spectrum.iter().map(|l| l * l).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub traces: [f64; 2],
    /// Relative trace contribution of the upper half of the retained modes.
    pub upper_half_share: [f64; 2],
}

/// Checks the decay hypotheses (`δ_j > 1/2`, nonnegative square-summable
/// spectrum bounded by `C_j ν_k^{−δ_j}`).
pub fn validate_noise(spec: &NoiseSpec, basis: &SpectralBasis) -> Result<NoiseReport> {
    let mut traces = [0.0; 2];
    let mut share = [0.0; 2];
    for j in 1..=2 {
        let ch = spec.channel(j);
        if !(ch.delta > 0.5) {
            return Err(invalid(format!(
                "channel {j}: decay exponent {} must exceed 1/2",
                ch.delta
            )));
        }
        if !(ch.amplitude >= 0.0) || !ch.amplitude.is_finite() {
            return Err(invalid(format!(
                "channel {j}: amplitude must be nonnegative"
            )));
        }
        let lambda = spec.spectrum(basis, j);
        for (k, (&l, nu)) in lambda.iter().zip(basis.eigenvalues()).enumerate() {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(invalid(format!(
                    "channel {j}: λ_{k} = {l} is not a nonnegative number"
                )));
            }
            if nu > 0.0 && l > ch.amplitude * nu.powf(-ch.delta) * (1.0 + 1e-12) {
                return Err(invalid(format!(
                    "channel {j}: λ_{k} = {l} exceeds the decay bound C ν_k^(-δ)"
                )));
            }
        }
        let t = trace(&lambda);
        let upper = trace(&lambda[lambda.len() / 2..]);
        traces[j - 1] = t;
        share[j - 1] = if t > 0.0 { upper / t } else { 0.0 };
    }
    Ok(NoiseReport {
        traces,
        upper_half_share: share,
    })
}

/// Address of one independent family of Brownian motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub path: u64,
    pub rung: u64,
}

impl NoiseKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: 0,
            rung: 0,
        }
    }

    pub fn with_path(self, path: u64) -> Self {
        Self { path, ..self }
    }

    pub fn with_rung(self, rung: u64) -> Self {
        Self { rung, ..self }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the Brownian motion `β_mode^{(channel)}` of `key`.
pub struct Substream {
    rng: ChaCha8Rng,
}

/// Words consumed per increment (two u64 for one Box–Muller draw).
const WORDS_PER_STEP: u128 = 4;

impl Substream {
    pub fn new(key: NoiseKey, channel: usize, mode: usize) -> Self {
        let a = splitmix64(key.seed);
        let b = splitmix64(a ^ key.path.wrapping_mul(0xd6e8_feb8_6659_fd93));
        let c = splitmix64(b ^ key.rung.wrapping_mul(0xa076_1d64_78bd_642f));
        let d = splitmix64(c ^ 0x5851_f42d_4c95_7f2d);
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip([a, b, c, d]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(((channel as u64) << 32) | mode as u64);
        Self { rng }
    }

    /// Standard normal for `step`, independent of any other step.
    pub fn normal_at(&mut self, step: u64) -> f64 {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        self.next_normal()
    }

    /// Standard normal for the step following the last one drawn.
    pub fn next_normal(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let y = self.rng.next_u64();
        let u1 = ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (y >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// Brownian increments `Δβ_k^{(j)}(t_n)` for both channels on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    dt: f64,
    steps: usize,
    modes: usize,
    /// Per channel, step-major `steps × modes`.
    increments: [Vec<f64>; 2],
}

impl NoisePath {
    pub fn generate(key: NoiseKey, modes: usize, dt: f64, steps: usize) -> Self {
        let sqrt_dt = dt.sqrt();
        let mut increments = [vec![0.0; steps * modes], vec![0.0; steps * modes]];
        for (c, inc) in increments.iter_mut().enumerate() {
            for k in 0..modes {
                let mut s = Substream::new(key, c + 1, k);
                if steps > 0 {
                    inc[k] = sqrt_dt * s.normal_at(0);
                }
                for n in 1..steps {
                    inc[n * modes + k] = sqrt_dt * s.next_normal();
                }
            }
        }
        Self {
            dt,
            steps,
            modes,
            increments,
        }
    }

    /// Noise-free path of the given shape.
    pub fn zero(modes: usize, dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            modes,
            increments: [vec![0.0; steps * modes], vec![0.0; steps * modes]],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// `Δβ^{(channel)}(t_step)` over all modes.
    pub fn increment(&self, channel: usize, step: usize) -> &[f64] {
        &self.increments[channel - 1][step * self.modes..(step + 1) * self.modes]
    }

    /// Increments of mode `k` over all steps.
    pub fn mode_series(&self, channel: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.increments[channel - 1]
            .iter()
            .skip(k)
            .step_by(self.modes)
            .copied()
    }

    /// Path on a grid `factor` times coarser, driven by the same Brownian
    /// motions (consecutive increments summed).
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(invalid(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let m = self.modes;
        let mut increments = [vec![0.0; steps * m], vec![0.0; steps * m]];
        for (c, inc) in increments.iter_mut().enumerate() {
            for n in 0..steps {
                for f in 0..factor {
                    let src = &self.increments[c][(n * factor + f) * m..(n * factor + f + 1) * m];
                    for (d, s) in inc[n * m..(n + 1) * m].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Ok(NoisePath {
            dt: self.dt * factor as f64,
            steps,
            modes: m,
            increments,
        })
    }

    /// Sub-path covering steps `start..`, used when a run restarts mid-grid.
    pub fn tail(&self, start: usize) -> NoisePath {
        let m = self.modes;
        let start = start.min(self.steps);
        NoisePath {
            dt: self.dt,
            steps: self.steps - start,
            modes: m,
            increments: [
                self.increments[0][start * m..].to_vec(),
                self.increments[1][start * m..].to_vec(),
            ],
        }
    }
}

/// Spectra and basis needed to turn Brownian increments into fields.
#[derive(Debug, Clone)]
pub struct NoiseField {
    spectra: [Vec<f64>; 2],
}

impl NoiseField {
    pub fn new(spec: &NoiseSpec, basis: &SpectralBasis) -> Self {
        Self {
            spectra: [spec.spectrum(basis, 1), spec.spectrum(basis, 2)],
        }
    }

    pub fn spectrum(&self, channel: usize) -> &[f64] {
        &self.spectra[channel - 1]
    }

    pub fn is_silent(&self, channel: usize) -> bool {
        self.spectra[channel - 1].iter().all(|&l| l == 0.0)
    }

    /// `ΔW_j = Σ_k λ_k ψ_k Δβ_k`.
    pub fn increment_field(
        &self,
        basis: &SpectralBasis,
        path: &NoisePath,
        channel: usize,
        step: usize,
    ) -> Field {
        if self.is_silent(channel) {
            return basis.zeros();
        }
        let coeffs: Vec<f64> = self.spectra[channel - 1]
            .iter()
            .zip(path.increment(channel, step))
            .map(|(l, b)| l * b)
            .collect();
        basis.synthesize(&coeffs).expect("noise path matches basis")
    }
}

/// Both increment fields for one step of the master stream (path 0, rung 0).
pub fn sample_increments(
    spec: &NoiseSpec,
    basis: &SpectralBasis,
    seed: u64,
    dt: f64,
    step_index: u64,
) -> Result<(Field, Field)> {
    sample_increments_keyed(spec, basis, NoiseKey::new(seed), dt, step_index)
}

pub fn sample_increments_keyed(
    spec: &NoiseSpec,
    basis: &SpectralBasis,
    key: NoiseKey,
    dt: f64,
    step_index: u64,
) -> Result<(Field, Field)> {
    if !(dt > 0.0) {
        return Err(invalid(format!("time step must be positive (got {dt})")));
    }
    let sqrt_dt = dt.sqrt();
    let mut out = Vec::with_capacity(2);
    for j in 1..=2 {
        let lambda = spec.spectrum(basis, j);
        if lambda.iter().all(|&l| l == 0.0) {
            out.push(basis.zeros());
            continue;
        }
        let coeffs: Vec<f64> = lambda
            .iter()
            .enumerate()
            .map(|(k, l)| {
                if *l == 0.0 {
                    0.0
                } else {
                    l * sqrt_dt * Substream::new(key, j, k).normal_at(step_index)
                }
            })
            .collect();
        out.push(basis.synthesize(&coeffs)?);
    }
    let w2 = out.pop().unwrap();
    let w1 = out.pop().unwrap();
    Ok((w1, w2))
}

/// `c_j(x) = ½ σ_j² Σ_k (λ_k^{(j)})² ψ_k(x)²`, the Itô drift coefficient
/// that converts `σ_j u ∘ dW_j` into Itô form.
pub fn stratonovich_correction(
    spec: &NoiseSpec,
    basis: &SpectralBasis,
    sigma: f64,
    j: usize,
) -> Field {
    let lambda = spec.spectrum(basis, j);
    let mut out = basis.zeros();
    for (k, l) in lambda.iter().enumerate() {
        if *l == 0.0 {
            continue;
        }
        let psi = basis.eigenfunction(k);
        let w = 0.5 * sigma * sigma * l * l;
        for (o, p) in out.values_mut().iter_mut().zip(psi.values()) {
            *o += w * p * p;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdgReport {
    pub p: f64,
    pub n_paths: usize,
    /// `E sup_t |Y(t)|_{L²}^p`
    pub sup_moment: Estimate,
    /// `(∫_0^T Σ_k λ_k² |ξ ψ_k|²_{L²} dt)^{p/2}`, the quadratic variation of `Y`.
    pub quadratic_variation_moment: f64,
    /// `None` for a degenerate integrand.
    pub ratio: Option<f64>,
    /// `E |Y(T)|²_{L²}` and its Itô-isometry value.
    pub terminal_second_moment: Estimate,
    pub isometry_value: f64,
}

/// Monte-Carlo check of the Burkholder–Davis–Gundy scaling for
/// `Y(t) = ∫_0^t ξ dW_1` with a deterministic integrand `ξ`.
#[allow(clippy::too_many_arguments)]
pub fn bdg_selfcheck(
    spec: &NoiseSpec,
    basis: &SpectralBasis,
    xi: &Field,
    p: f64,
    n_paths: usize,
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<BdgReport> {
    if p < 2.0 {
        return Err(invalid(format!("BDG check needs p >= 2 (got {p})")));
    }
    if n_paths < 1000 {
        return Err(invalid(format!(
            "BDG check needs at least 1000 paths (got {n_paths})"
        )));
    }
    let noise = NoiseField::new(spec, basis);
    let lambda = noise.spectrum(1);
    let horizon = dt * steps as f64;
    let qv_rate: f64 = lambda
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let xp = xi.zip_map(&basis.eigenfunction(k), |a, b| a * b);
            l * l * xp.inner(&xp)
        })
        .sum();
    let qv_moment = (horizon * qv_rate).powf(p / 2.0);
    let key = NoiseKey::new(seed).with_rung(u64::MAX);
    let per_path: Vec<(f64, f64)> = crate::parallel::map_indexed(n_paths, |path| {
        let np = NoisePath::generate(key.with_path(path as u64), basis.len(), dt, steps);
        let mut y = basis.zeros();
        let mut sup: f64 = 0.0;
        for n in 0..steps {
            let dw = noise.increment_field(basis, &np, 1, n);
            for ((yi, xv), wv) in y.values_mut().iter_mut().zip(xi.values()).zip(dw.values()) {
                *yi += xv * wv;
            }
            sup = sup.max(y.l2_norm());
        }
        let terminal = y.inner(&y);
        (sup.powf(p), terminal)
    });
    let sup_moment = Estimate::from_samples(per_path.iter().map(|s| s.0));
    let terminal = Estimate::from_samples(per_path.iter().map(|s| s.1));
    let ratio = (qv_moment > 0.0).then(|| sup_moment.mean / qv_moment);
    Ok(BdgReport {
        p,
        n_paths,
        sup_moment,
        quadratic_variation_moment: qv_moment,
        ratio,
        terminal_second_moment: terminal,
        isometry_value: horizon * qv_rate,
    })
}

/// Sample moments of `⟨ΔW_j, ψ_k⟩` over consecutive steps of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementStatistics {
    pub draws: usize,
    pub dt: f64,
    /// `[channel][mode]`: sample variance with its standard error, and `λ_k² Δt`.
    pub variances: [Vec<(Estimate, f64)>; 2],
    /// `[k][l]`: sample correlation of channel-1 mode `k` with channel-2 mode `l`.
    pub cross_correlation: Vec<Vec<f64>>,
    /// `E|ΔW_j|²_{L²}` per channel with its expected value `Δt · trace_j`.
    pub energy: [(Estimate, f64); 2],
}

impl IncrementStatistics {
    /// Largest deviation of any checked moment, in standard errors.
    pub fn worst_z(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for ch in &self.variances {
            for (e, want) in ch {
                worst = worst.max(e.z_score(*want));
            }
        }
        let corr_se = 1.0 / (self.draws as f64).sqrt();
        for row in &self.cross_correlation {
            for r in row {
                worst = worst.max(r.abs() / corr_se);
            }
        }
        for (e, want) in &self.energy {
            worst = worst.max(e.z_score(*want));
        }
        worst
    }
}

/// Draws `draws` consecutive increment fields and compares the projected
/// moments with the covariance they were built from.
pub fn increment_statistics(
    spec: &NoiseSpec,
    basis: &SpectralBasis,
    seed: u64,
    dt: f64,
    draws: usize,
    checked_modes: usize,
) -> Result<IncrementStatistics> {
    let checked = checked_modes.min(basis.len());
    let noise = NoiseField::new(spec, basis);
    let path = NoisePath::generate(NoiseKey::new(seed), basis.len(), dt, draws);
    let mut proj = [
        vec![vec![0.0; draws]; checked],
        vec![vec![0.0; draws]; checked],
    ];
    let mut energy = [vec![0.0; draws], vec![0.0; draws]];
    for n in 0..draws {
        for j in 1..=2 {
            let w = noise.increment_field(basis, &path, j, n);
            let c = basis.analyze(&w)?;
            for k in 0..checked {
                proj[j - 1][k][n] = c[k];
            }
            energy[j - 1][n] = w.inner(&w);
        }
    }
    let variances = [0, 1].map(|c| {
        (0..checked)
            .map(|k| {
                let l = noise.spectrum(c + 1)[k];
                // mean is known to be zero
                (
                    Estimate::from_samples(proj[c][k].iter().map(|x| x * x)),
                    l * l * dt,
                )
            })
            .collect::<Vec<_>>()
    });
    let cross_correlation = (0..checked)
        .map(|k| {
            (0..checked)
                .map(|l| correlation(&proj[0][k], &proj[1][l]))
                .collect()
        })
        .collect();
    let energy = [0, 1].map(|c| {
        (
            Estimate::from_samples(energy[c].iter().copied()),
            dt * trace(noise.spectrum(c + 1)),
        )
    });
    Ok(IncrementStatistics {
        draws,
        dt,
        variances,
        cross_correlation,
        energy,
    })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
