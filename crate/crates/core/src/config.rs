//! Run configuration: a TOML document with one section per component.
//!
//! Only `grid.d`, `model.gamma` and `solver.t_end` are required; every
//! other key has a default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::{Boundary, SpectralBasis};
use crate::diagnostics::HypothesisParams;
use crate::dynamics::{homogeneous_steady_state, ModelConfig, RecordSettings, SolverConfig};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::fixedpoint::{exit_ladder, CutoffParams, PicardSettings};
use crate::noise::NoiseSpec;

/// Environment variable consulted for the seed when neither the command
/// line nor the config sets one.
pub const SEED_ENV: &str = "KLAUSMEIER_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Picard,
    Glue,
    Ensemble,
    Uniqueness,
    Validate,
    NoiseSelftest,
    PatternDemo,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Simulate,
        Experiment::Picard,
        Experiment::Glue,
        Experiment::Ensemble,
        Experiment::Uniqueness,
        Experiment::Validate,
        Experiment::NoiseSelftest,
        Experiment::PatternDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Picard => "picard",
            Experiment::Glue => "glue",
            Experiment::Ensemble => "ensemble",
            Experiment::Uniqueness => "uniqueness",
            Experiment::Validate => "validate",
            Experiment::NoiseSelftest => "noise-selftest",
            Experiment::PatternDemo => "pattern-demo",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|e| e.name()).collect();
                Error::Config(format!(
                    "unknown experiment `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    /// Retained noise modes; all resolvable modes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
}

fn default_n() -> usize {
    64
}

fn default_boundary() -> Boundary {
    Boundary::Periodic
}

/// Hypothesis indices; `d` and `γ` come from the grid and model sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisSection {
    pub m: f64,
    pub m0: f64,
    pub p_star: f64,
    pub p0_star: f64,
    pub rho: f64,
    pub l: f64,
    pub delta0: f64,
}

impl Default for HypothesisSection {
    fn default() -> Self {
        let h = HypothesisParams::feasible_d1();
        Self {
            m: h.m,
            m0: h.m0,
            p_star: h.p_star,
            p0_star: h.p0_star,
            rho: h.rho,
            l: h.l,
            delta0: h.delta0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffSection {
    pub kappa: f64,
    /// Exponent of `h`; the largest admissible value when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Levels for `glue`; `1, 2, …, ⌊κ⌋` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<f64>>,
    /// Levels at which `ensemble` estimates exit probabilities.
    pub exit_levels: Vec<f64>,
}

impl Default for CutoffSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            nu: None,
            ladder: None,
            exit_levels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        let p = PicardSettings::default();
        Self {
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

/// Named initial-condition presets. Coordinates run over `[0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Constant {
        value: f64,
    },
    /// `amplitude · exp(−|x − center|² / (2 width²))`, `center` on the diagonal.
    Bump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "half")]
        center: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    /// Homogeneous steady state times `1 + amplitude · cos(2π mode x₁)`.
    PerturbedHomogeneous {
        #[serde(default = "default_perturbation")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        mode: usize,
    },
    /// Whitespace-separated grid values in row-major order.
    File {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn one_usize() -> usize {
    1
}

fn default_width() -> f64 {
    0.1
}

fn default_perturbation() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub u: InitialCondition,
    pub v: InitialCondition,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            u: InitialCondition::Bump {
                amplitude: 1.0,
                center: 0.5,
                width: 0.1,
            },
            v: InitialCondition::Constant { value: 0.5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub paths: usize,
    /// Moment order `p`.
    pub p: f64,
    /// Worker threads; 0 uses all available.
    pub workers: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            paths: 100,
            p: 1.0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessSection {
    pub tol: f64,
    /// Seed of the second run in the negative control.
    pub control_seed: u64,
}

impl Default for UniquenessSection {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            control_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestSection {
    pub draws: usize,
    pub checked_modes: usize,
    pub bdg_paths: usize,
    pub bdg_p: f64,
}

impl Default for SelftestSection {
    fn default() -> Self {
        Self {
            draws: 20_000,
            checked_modes: 8,
            bdg_paths: 1000,
            bdg_p: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub grid: GridSection,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub hypothesis: HypothesisSection,
    #[serde(default)]
    pub cutoff: CutoffSection,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub uniqueness: UniquenessSection,
    #[serde(default)]
    pub selftest: SelftestSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses `text`, applies `key=value` overrides (dotted keys, TOML
/// values; bare words are taken as strings) and fills in defaults.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(config_error)?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table).try_into().map_err(config_error)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("x = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override key `{key}`: `{p}` is not a section"))
        })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Single-line JSON echo for file headers.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn basis(&self) -> Result<SpectralBasis> {
        let g = &self.grid;
        let modes = match g.modes {
            Some(k) => k,
            None => SpectralBasis::resolvable_modes(g.d, g.boundary, g.n),
        };
        SpectralBasis::new(g.d, g.boundary, g.n, modes)
    }

    pub fn hypothesis(&self) -> HypothesisParams {
        let h = &self.hypothesis;
        HypothesisParams {
            d: self.grid.d,
            gamma: self.model.gamma,
            m: h.m,
            m0: h.m0,
            p_star: h.p_star,
            p0_star: h.p0_star,
            rho: h.rho,
            l: h.l,
            delta0: h.delta0,
        }
    }

    pub fn cutoff(&self) -> Result<CutoffParams> {
        let h = &self.hypothesis;
        let c = CutoffParams::new(self.cutoff.kappa, self.model.gamma, h.m, h.m0, h.p0_star)?;
        match self.cutoff.nu {
            Some(nu) => c.with_nu(nu),
            None => Ok(c),
        }
    }

    pub fn record_settings(&self) -> Result<RecordSettings> {
        Ok(RecordSettings {
            rho: self.hypothesis.rho,
            cutoff: self.cutoff()?,
        })
    }

    pub fn ladder(&self) -> Vec<f64> {
        self.cutoff
            .ladder
            .clone()
            .unwrap_or_else(|| exit_ladder(self.cutoff.kappa))
    }

    pub fn picard_settings(&self) -> PicardSettings {
        PicardSettings {
            tol: self.picard.tol,
            max_iter: self.picard.max_iter,
            ..PicardSettings::default()
        }
    }

    /// Seed from the flag, else the config, else the environment, else 0,
    /// together with where it came from.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<(u64, &'static str)> {
        if let Some(s) = flag {
            return Ok((s, "flag"));
        }
        if let Some(s) = self.seed {
            return Ok((s, "config"));
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                v.trim().parse().map(|s| (s, "env")).map_err(|_| {
                    Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))
                })
            }
            Err(_) => Ok((DEFAULT_SEED, "default")),
        }
    }

    /// Checks everything that can be checked without running: grid, model,
    /// solver, noise decay, cutoff exponents and the initial data.
    pub fn validate(&self) -> Result<()> {
        let basis = self.basis()?;
        self.model.validate()?;
        self.solver.validate()?;
        crate::noise::validate_noise(&self.noise, &basis)?;
        self.cutoff()?;
        self.initial_fields(&basis)?;
        Ok(())
    }

    pub fn initial_fields(&self, basis: &SpectralBasis) -> Result<(Field, Field)> {
        Ok((
            self.initial_field(basis, &self.initial.u, 0)?,
            self.initial_field(basis, &self.initial.v, 1)?,
        ))
    }

    fn initial_field(
        &self,
        basis: &SpectralBasis,
        ic: &InitialCondition,
        component: usize,
    ) -> Result<Field> {
        let d = basis.dim();
        match ic {
            InitialCondition::Constant { value } => Ok(Field::constant(d, basis.n(), *value)),
            InitialCondition::Bump {
                amplitude,
                center,
                width,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                Ok(basis.sample(|x| {
                    let r2: f64 = x[..d].iter().map(|xi| (xi - center).powi(2)).sum();
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                }))
            }
            InitialCondition::PerturbedHomogeneous { amplitude, mode } => {
                let (u, v) = homogeneous_steady_state(&self.model).ok_or_else(|| {
                    Error::Config(
                        "model has no positive homogeneous steady state to perturb".into(),
                    )
                })?;
                let base = if component == 0 { u } else { v };
                let k = *mode as f64;
                Ok(basis.sample(|x| {
                    base * (1.0 + amplitude * (2.0 * std::f64::consts::PI * k * x[0]).cos())
                }))
            }
            InitialCondition::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let values = text
                    .split_whitespace()
                    .map(|w| w.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Field::from_values(d, basis.n(), values)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Calculus, NonnegPolicy};
    use crate::noise::ChannelSpec;
    use proptest::prelude::*;

    const MINIMAL: &str = "[grid]\nd = 1\n[model]\ngamma = 3.0\n[solver]\nt_end = 0.5\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!(c.grid.n, 64);
        assert_eq!(c.grid.boundary, Boundary::Periodic);
        assert_eq!(c.solver.dt, 1e-3);
        assert_eq!(c.solver.newton_tol, 1e-10);
        assert_eq!(c.model.chi, 1.0);
        assert_eq!(
            c.hypothesis(),
            HypothesisParams {
                gamma: 3.0,
                ..HypothesisParams::feasible_d1()
            }
        );
        assert_eq!(c.noise, NoiseSpec::default());
        c.validate().unwrap();
        let echo = c.to_toml();
        assert!(echo.contains("newton_max_iter = 50"));
        assert!(echo.contains("[initial.u]"));
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let typo = MINIMAL.replace("gamma", "gama");
        let e = parse_config(&typo, &[]).unwrap_err().to_string();
        assert!(e.contains("gama"), "{e}");
        let e = parse_config("[grid]\nd = 1\n[model]\ngamma = 3.0\n", &[])
            .unwrap_err()
            .to_string();
        assert!(e.contains("solver"), "{e}");
        let e = parse_config("[grid]\nd = 1\n[model\n", &[])
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_config(&format!("{MINIMAL}[initial.u]\npreset = \"wave\"\n"), &[])
            .unwrap_err()
            .to_string();
        assert!(e.contains("wave"), "{e}");
    }

    #[test]
    fn overrides_replace_and_add_keys() {
        let c = parse_config(
            MINIMAL,
            &[
                "model.gamma=2.5".into(),
                "grid.boundary=neumann".into(),
                "ensemble.paths = 300".into(),
                "noise.channel1.amplitude=0.2".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.model.gamma, 2.5);
        assert_eq!(c.grid.boundary, Boundary::Neumann);
        assert_eq!(c.ensemble.paths, 300);
        assert_eq!(c.noise.channel1.amplitude, 0.2);
        assert!(parse_config(MINIMAL, &["model.gamma".into()]).is_err());
        assert!(parse_config(MINIMAL, &["model..gamma=1".into()]).is_err());
        assert!(parse_config(MINIMAL, &["model.gamma.x=1".into()]).is_err());
        assert!(parse_config(MINIMAL, &["model.gama=3".into()]).is_err());
    }

    #[test]
    fn seed_precedence() {
        let mut c = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!(c.resolve_seed(Some(7)).unwrap(), (7, "flag"));
        c.seed = Some(3);
        assert_eq!(c.resolve_seed(Some(7)).unwrap(), (7, "flag"));
        assert_eq!(c.resolve_seed(None).unwrap(), (3, "config"));
    }

    #[test]
    fn presets_build_fields() {
        let mut c = parse_config(MINIMAL, &["grid.n=16".into()]).unwrap();
        let b = c.basis().unwrap();
        let (u, v) = c.initial_fields(&b).unwrap();
        assert!((u.max() - (-(0.5f64 - 8.0 / 16.0).powi(2) / 0.02).exp()).abs() < 1e-15);
        assert_eq!(v.min(), 0.5);
        assert!(c.initial_fields(&b).is_ok());

        c.initial.u = InitialCondition::PerturbedHomogeneous {
            amplitude: 0.1,
            mode: 1,
        };
        assert!(c.initial_fields(&b).is_err());
        c.model.rain = 2.0;
        c.model.evaporation = 1.0;
        c.model.mortality = 0.5;
        let (u, _) = c.initial_fields(&b).unwrap();
        let (us, _) = homogeneous_steady_state(&c.model).unwrap();
        assert!((u.values()[0] - 1.1 * us).abs() < 1e-14);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(&path, (0..16).map(|i| format!("{i}\n")).collect::<String>()).unwrap();
        c.initial.v = InitialCondition::File { path: path.clone() };
        let (_, v) = c.initial_fields(&b).unwrap();
        assert_eq!(v.values()[15], 15.0);
        std::fs::write(&path, "1 2 3").unwrap();
        assert!(c.initial_fields(&b).is_err());
    }

    fn arb_ic() -> impl Strategy<Value = InitialCondition> {
        prop_oneof![
            (-10.0f64..10.0).prop_map(|value| InitialCondition::Constant { value }),
            (0.0f64..5.0, 0.0f64..1.0, 0.01f64..1.0).prop_map(|(amplitude, center, width)| {
                InitialCondition::Bump {
                    amplitude,
                    center,
                    width,
                }
            }),
            (0.0f64..0.5, 1usize..5).prop_map(|(amplitude, mode)| {
                InitialCondition::PerturbedHomogeneous { amplitude, mode }
            }),
            "[a-z]{1,8}".prop_map(|s| InitialCondition::File {
                path: PathBuf::from(format!("{s}.txt"))
            }),
        ]
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            (
                1usize..=3,
                prop::sample::select(vec![8usize, 16, 32, 64]),
                any::<bool>(),
                prop::option::of(1usize..8),
            ),
            (
                1.01f64..6.0,
                0.0f64..2.0,
                0.0f64..2.0,
                0.0f64..3.0,
                0.0f64..1.0,
                any::<bool>(),
            ),
            (1e-4f64..1e-2, 0usize..100, 1usize..5, any::<bool>()),
            (
                0.51f64..3.0,
                0.0f64..2.0,
                prop::option::of(prop::collection::vec(0.0f64..1.0, 1..4)),
            ),
            (
                0.1f64..10.0,
                prop::option::of(0.01f64..1.0),
                prop::collection::vec(0.5f64..16.0, 0..4),
            ),
            (
                arb_ic(),
                arb_ic(),
                prop::option::of(0u64..=i64::MAX as u64),
                100usize..1000,
            ),
        )
            .prop_map(|(g, m, s, n, cut, rest)| {
                let mut model = ModelConfig::new(m.0);
                model.r_u = m.1;
                model.sigma1 = m.2;
                model.rain = m.3;
                model.sigma2 = m.4;
                model.calculus = if m.5 {
                    Calculus::Stratonovich
                } else {
                    Calculus::Ito
                };
                let mut solver = SolverConfig::new(s.0, s.0 * s.1 as f64);
                solver.snapshot_stride = s.2;
                solver.nonneg_policy = if s.3 {
                    NonnegPolicy::Project
                } else {
                    NonnegPolicy::Monitor
                };
                let mut c2 = ChannelSpec::new(n.0, n.1);
                c2.spectrum = n.2;
                RunConfig {
                    experiment: None,
                    seed: rest.2,
                    out_dir: PathBuf::from("out"),
                    grid: GridSection {
                        d: g.0,
                        n: g.1,
                        boundary: if g.2 {
                            Boundary::Neumann
                        } else {
                            Boundary::Periodic
                        },
                        modes: g.3,
                    },
                    model,
                    solver,
                    noise: NoiseSpec::new(ChannelSpec::new(n.0 + 0.5, n.1), c2),
                    hypothesis: HypothesisSection::default(),
                    cutoff: CutoffSection {
                        kappa: cut.0,
                        nu: cut.1,
                        ladder: None,
                        exit_levels: cut.2,
                    },
                    picard: PicardSection::default(),
                    initial: InitialSection {
                        u: rest.0,
                        v: rest.1,
                    },
                    ensemble: EnsembleSection {
                        paths: rest.3,
                        ..EnsembleSection::default()
                    },
                    uniqueness: UniquenessSection::default(),
                    selftest: SelftestSection::default(),
                }
            })
    }

    proptest! {
        #[test]
        fn emit_parse_round_trip(c in arb_config()) {
            let text = c.to_toml();
            let back = parse_config(&text, &[]).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_toml(), text);
        }
    }
}
