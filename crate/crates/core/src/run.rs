//! Orchestration of the command-line experiments.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Experiment, RunConfig};
use crate::diagnostics::{
    ensemble_moments, nonneg_monitor, uniqueness_admissible, uniqueness_experiment,
    validate_hypotheses, MomentOrders, NonnegReport,
};
use crate::dynamics::{simulate_path, NonnegPolicy, PathMode, Stepper, Trajectory};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::fixedpoint::{
    exit_prob_estimate, first_exit_time, fit_tail, glue_simulate, picard_solve, InitialIterate,
    Scenario,
};
use crate::noise::{bdg_selfcheck, increment_statistics, validate_noise, NoiseKey, NoisePath};
use crate::output::{
    write_config_echo, write_failure, write_norms, write_report, write_snapshots, Metadata,
};
use crate::parallel::with_workers;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BREACH: i32 = 2;

/// Standard errors allowed in the noise self-test.
const SELFTEST_Z: f64 = 4.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: i32,
    /// One line, includes the master seed.
    pub summary: String,
    pub out_dir: PathBuf,
}

struct Verdict {
    summary: String,
    breaches: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    meta: &'a Metadata,
    out: &'a Path,
    seed: u64,
}

/// Runs one experiment and writes its files. Never panics on bad input:
/// errors and invariant breaches end up in `failure.txt` and the status.
pub fn run(experiment: Experiment, cfg: RunConfig, opts: &RunOptions) -> RunOutcome {
    let out = opts.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let (seed, source) = match cfg.resolve_seed(opts.seed) {
        Ok(s) => s,
        Err(e) => {
            return RunOutcome {
                status: EXIT_ERROR,
                summary: format!("{}: error: {e}", experiment.name()),
                out_dir: out,
            }
        }
    };
    let meta = Metadata {
        experiment,
        seed,
        seed_source: source,
        seed_flag: opts.seed,
        config: cfg.clone(),
    };
    let workers = opts.workers.unwrap_or(cfg.ensemble.workers);
    let result = fs::create_dir_all(&out).map_err(Error::from).and_then(|_| {
        write_config_echo(&out.join("config.toml"), &meta)?;
        let ctx = Ctx {
            cfg: &cfg,
            meta: &meta,
            out: &out,
            seed,
        };
        with_workers(workers, || execute(experiment, &ctx))
    });
    let name = experiment.name();
    let (status, summary) = match result {
        Ok(v) if v.breaches.is_empty() => {
            (EXIT_OK, format!("{name}: ok seed={seed} {}", v.summary))
        }
        Ok(v) => {
            let msg = v.breaches.join("; ");
            let _ = write_failure(&out.join("failure.txt"), &meta, "invariant", &msg);
            (
                EXIT_BREACH,
                format!("{name}: invariant breach seed={seed} {msg}"),
            )
        }
        Err(e) => {
            let _ = write_failure(&out.join("failure.txt"), &meta, "error", &e.to_string());
            (EXIT_ERROR, format!("{name}: error seed={seed} {e}"))
        }
    };
    RunOutcome {
        status,
        summary,
        out_dir: out,
    }
}

fn execute(experiment: Experiment, ctx: &Ctx) -> Result<Verdict> {
    match experiment {
        Experiment::Validate => validate(ctx),
        Experiment::Uniqueness => uniqueness(ctx),
        _ => {
            ctx.cfg.validate()?;
            let basis = ctx.cfg.basis()?;
            let stepper = Stepper::new(&basis, ctx.cfg.model, ctx.cfg.solver, &ctx.cfg.noise)?;
            match experiment {
                Experiment::Simulate => simulate(ctx, &stepper, false),
                Experiment::PatternDemo => simulate(ctx, &stepper, true),
                Experiment::Picard => picard(ctx, &stepper),
                Experiment::Glue => glue(ctx, &stepper),
                Experiment::Ensemble => ensemble(ctx, &stepper),
                Experiment::NoiseSelftest => noise_selftest(ctx, &stepper),
                Experiment::Validate | Experiment::Uniqueness => unreachable!(),
            }
        }
    }
}

fn path_noise(ctx: &Ctx, stepper: &Stepper) -> Result<NoisePath> {
    let solver = stepper.solver();
    Ok(NoisePath::generate(
        NoiseKey::new(ctx.seed),
        stepper.basis().len(),
        solver.dt,
        solver.steps()?,
    ))
}

fn nonneg_breach(ctx: &Ctx, report: &NonnegReport) -> Option<String> {
    (ctx.cfg.solver.nonneg_policy == NonnegPolicy::Monitor && !report.holds()).then(|| {
        format!(
            "{} grid values below tolerance (worst u {:.3e}, worst v {:.3e})",
            report.below_tolerance, report.worst_u, report.worst_v
        )
    })
}

fn write_path(ctx: &Ctx, stepper: &Stepper, traj: &Trajectory) -> Result<()> {
    let snaps = traj.snapshots(ctx.cfg.solver.snapshot_stride);
    write_snapshots(
        &ctx.out.join("snapshots.bin"),
        ctx.meta,
        stepper.basis().boundary(),
        &snaps,
    )?;
    write_norms(&ctx.out.join("norms.csv"), ctx.meta, &traj.norms)
}

fn simulate(ctx: &Ctx, stepper: &Stepper, pattern: bool) -> Result<Verdict> {
    let (u0, v0) = ctx.cfg.initial_fields(stepper.basis())?;
    let settings = ctx.cfg.record_settings()?;
    let traj = simulate_path(
        stepper,
        &u0,
        &v0,
        &path_noise(ctx, stepper)?,
        PathMode::Coupled,
        &settings,
    )?;
    write_path(ctx, stepper, &traj)?;
    let nonneg = nonneg_monitor(&traj);
    let mut summary = format!(
        "steps={} min_u={:.6e} min_v={:.6e}",
        traj.steps(),
        nonneg.worst_u,
        nonneg.worst_v
    );
    if pattern {
        let report = pattern_report(stepper, &traj.states[0].v, &traj.last().v)?;
        write_report(&ctx.out.join("pattern.txt"), ctx.meta, &report.0)?;
        summary.push_str(&format!(" {}", report.1));
    }
    Ok(Verdict {
        summary,
        breaches: nonneg_breach(ctx, &nonneg).into_iter().collect(),
    })
}

/// Spread of `v` before and after, and the strongest non-constant mode.
fn pattern_report(stepper: &Stepper, v0: &Field, v1: &Field) -> Result<(String, String)> {
    let full = stepper.full_basis();
    let c = full.analyze(v1)?;
    let (k, amp) = c
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, 0.0f64), |best, (k, a)| {
            if a.abs() > best.1 {
                (k, a.abs())
            } else {
                best
            }
        });
    let index = full.modes()[k].index;
    let spread = |f: &Field| f.max() - f.min();
    let text = format!(
        "initial_spread_v: {:.17e}\nfinal_spread_v: {:.17e}\ndominant_mode: {:?}\ndominant_amplitude: {:.17e}\n",
        spread(v0),
        spread(v1),
        &index[..full.dim()],
        amp
    );
    let short = format!("spread_v={:.3e}->{:.3e}", spread(v0), spread(v1));
    Ok((text, short))
}

fn picard(ctx: &Ctx, stepper: &Stepper) -> Result<Verdict> {
    let (u0, v0) = ctx.cfg.initial_fields(stepper.basis())?;
    let settings = ctx.cfg.record_settings()?;
    let kappa = ctx.cfg.cutoff.kappa;
    let r = picard_solve(
        stepper,
        &u0,
        &v0,
        kappa,
        &path_noise(ctx, stepper)?,
        &settings,
        &ctx.cfg.picard_settings(),
    )?;
    write_path(ctx, stepper, &r.trajectory)?;
    let exit = first_exit_time(&r.trajectory, kappa)?;
    let mut body = format!(
        "kappa: {kappa}\niterations: {}\nfinal_residual: {:.6e}\nexit_time: {}\niteration,residual\n",
        r.iterations(),
        r.final_residual(),
        exit.map_or_else(|| "none".into(), |t| format!("{t:.17e}"))
    );
    for (i, res) in r.residuals.iter().enumerate() {
        body.push_str(&format!("{},{:.17e}\n", i + 1, res));
    }
    write_report(&ctx.out.join("picard.txt"), ctx.meta, &body)?;
    let nonneg = nonneg_monitor(&r.trajectory);
    Ok(Verdict {
        summary: format!(
            "iterations={} residual={:.3e}",
            r.iterations(),
            r.final_residual()
        ),
        breaches: nonneg_breach(ctx, &nonneg).into_iter().collect(),
    })
}

fn glue(ctx: &Ctx, stepper: &Stepper) -> Result<Verdict> {
    let (u0, v0) = ctx.cfg.initial_fields(stepper.basis())?;
    let settings = ctx.cfg.record_settings()?;
    let g = glue_simulate(
        stepper,
        &u0,
        &v0,
        &ctx.cfg.ladder(),
        NoiseKey::new(ctx.seed),
        &settings,
        &ctx.cfg.picard_settings(),
    )?;
    write_path(ctx, stepper, &g.trajectory)?;
    let opt = |t: Option<f64>| t.map_or_else(|| "none".to_string(), |t| format!("{t:.17e}"));
    let mut body = format!(
        "rungs: {}\ntail_start: {}\nrung,kappa,start_time,exit_time,picard_iterations,final_residual\n",
        g.rungs.len(),
        opt(g.tail_start)
    );
    for r in &g.rungs {
        body.push_str(&format!(
            "{},{},{:.17e},{},{},{:.6e}\n",
            r.rung,
            r.kappa,
            r.start_time,
            opt(r.exit_time),
            r.picard_iterations,
            r.final_residual
        ));
    }
    write_report(&ctx.out.join("glue.txt"), ctx.meta, &body)?;
    let nonneg = nonneg_monitor(&g.trajectory);
    Ok(Verdict {
        summary: format!("rungs={} tail_start={}", g.rungs.len(), opt(g.tail_start)),
        breaches: nonneg_breach(ctx, &nonneg).into_iter().collect(),
    })
}

fn ensemble(ctx: &Ctx, stepper: &Stepper) -> Result<Verdict> {
    let (u0, v0) = ctx.cfg.initial_fields(stepper.basis())?;
    let scenario = Scenario {
        stepper,
        u0,
        v0,
        settings: ctx.cfg.record_settings()?,
        seed: ctx.seed,
    };
    let orders = MomentOrders::from_hypothesis(&ctx.cfg.hypothesis(), ctx.cfg.ensemble.p);
    let report = ensemble_moments(&scenario, &orders, ctx.cfg.ensemble.paths)?;
    let mut body = report.to_text();
    let levels = &ctx.cfg.cutoff.exit_levels;
    if !levels.is_empty() {
        let est = exit_prob_estimate(&scenario, levels, ctx.cfg.ensemble.paths)?;
        let fit = fit_tail(&est);
        body.push_str(&format!(
            "tail_envelope: {:.17e}\ntail_least_squares: {:.17e}\nkappa,p_hat,std_error\n",
            fit.envelope, fit.least_squares
        ));
        for e in &est {
            body.push_str(&format!(
                "{},{:.17e},{:.17e}\n",
                e.kappa, e.p_hat, e.std_error
            ));
        }
    }
    write_report(&ctx.out.join("ensemble.txt"), ctx.meta, &body)?;
    let mut breaches = Vec::new();
    if ctx.cfg.solver.nonneg_policy == NonnegPolicy::Monitor && report.below_tolerance > 0 {
        breaches.push(format!(
            "{} grid values below tolerance (worst u {:.3e}, worst v {:.3e})",
            report.below_tolerance, report.worst_min_u, report.worst_min_v
        ));
    }
    Ok(Verdict {
        summary: format!(
            "paths={} c0={:.6e} c2={:.6e}",
            report.n_paths, report.c0.mean, report.c2.mean
        ),
        breaches,
    })
}

fn uniqueness(ctx: &Ctx) -> Result<Verdict> {
    // refuse before building anything expensive
    let hypothesis = ctx.cfg.hypothesis();
    let report = validate_hypotheses(&hypothesis);
    if hypothesis.d != 1 || !report.uniqueness_ok() {
        return Err(Error::InvalidParameter(format!(
            "uniqueness experiment refused: needs d = 1 and the uniqueness hypotheses (d = {}, failed: {})",
            hypothesis.d,
            report.failed().join(", ")
        )));
    }
    ctx.cfg.validate()?;
    let basis = ctx.cfg.basis()?;
    let stepper = Stepper::new(&basis, ctx.cfg.model, ctx.cfg.solver, &ctx.cfg.noise)?;
    uniqueness_admissible(&stepper, &hypothesis)?;
    let (u0, v0) = ctx.cfg.initial_fields(&basis)?;
    let scenario = Scenario {
        stepper: &stepper,
        u0,
        v0,
        settings: ctx.cfg.record_settings()?,
        seed: ctx.seed,
    };
    let picard = ctx.cfg.picard_settings();
    let tol = ctx.cfg.uniqueness.tol;
    let kappa = ctx.cfg.cutoff.kappa;
    let iterates = || [InitialIterate::ZeroReaction, InitialIterate::Zero];
    let main = uniqueness_experiment(
        &scenario,
        &hypothesis,
        kappa,
        iterates(),
        [ctx.seed, ctx.seed],
        &picard,
        tol,
    )?;
    let control = uniqueness_experiment(
        &scenario,
        &hypothesis,
        kappa,
        iterates(),
        [ctx.seed, ctx.cfg.uniqueness.control_seed],
        &picard,
        tol,
    )?;
    let body = format!(
        "{}control_distance: {:.17e}\ncontrol_seed: {}\n",
        main.to_text(),
        control.distance,
        ctx.cfg.uniqueness.control_seed
    );
    write_report(&ctx.out.join("uniqueness.txt"), ctx.meta, &body)?;
    let mut breaches = Vec::new();
    if !main.agrees() {
        breaches.push(format!("distance {:.3e} exceeds {tol:e}", main.distance));
    }
    Ok(Verdict {
        summary: format!(
            "distance={:.3e} control={:.3e}",
            main.distance, control.distance
        ),
        breaches,
    })
}

fn validate(ctx: &Ctx) -> Result<Verdict> {
    let cfg = ctx.cfg;
    let report = validate_hypotheses(&cfg.hypothesis());
    let mut body = report.to_text();
    cfg.validate()?;
    let flags = cfg.model.validate()?;
    let noise = validate_noise(&cfg.noise, &cfg.basis()?)?;
    body.push_str(&format!(
        "gamma_below_theory: {}\ngamma_near_linear: {}\nzero_rates: {}\nnoise_trace: {:.17e} {:.17e}\n",
        flags.gamma_below_theory,
        flags.gamma_near_linear,
        flags.zero_rates.join(" "),
        noise.traces[0],
        noise.traces[1]
    ));
    write_report(&ctx.out.join("validate.txt"), ctx.meta, &body)?;
    let breaches = if report.existence_ok() {
        Vec::new()
    } else {
        vec![format!(
            "existence hypotheses fail: {}",
            report.failed().join(", ")
        )]
    };
    Ok(Verdict {
        summary: format!(
            "existence={} uniqueness={}",
            report.existence_ok(),
            report.uniqueness_ok()
        ),
        breaches,
    })
}

fn noise_selftest(ctx: &Ctx, stepper: &Stepper) -> Result<Verdict> {
    let cfg = ctx.cfg;
    let basis = stepper.basis();
    let st = &cfg.selftest;
    let dt = cfg.solver.dt;
    let stats = increment_statistics(&cfg.noise, basis, ctx.seed, dt, st.draws, st.checked_modes)?;
    let steps = cfg.solver.steps()?.max(1);
    let ones = Field::constant(basis.dim(), basis.n(), 1.0);
    let bdg = bdg_selfcheck(
        &cfg.noise,
        basis,
        &ones,
        st.bdg_p,
        st.bdg_paths,
        dt,
        steps,
        ctx.seed,
    )?;
    let iso_z = bdg.terminal_second_moment.z_score(bdg.isometry_value);
    let body = format!(
        "draws: {}\nworst_z: {:.6}\nbdg_p: {}\nbdg_paths: {}\nbdg_ratio: {}\nterminal_second_moment: {:.17e} +- {:.6e}\nisometry_value: {:.17e}\nisometry_z: {:.6}\n",
        stats.draws,
        stats.worst_z(),
        bdg.p,
        bdg.n_paths,
        bdg.ratio.map_or_else(|| "none".into(), |r| format!("{r:.17e}")),
        bdg.terminal_second_moment.mean,
        bdg.terminal_second_moment.std_error,
        bdg.isometry_value,
        iso_z
    );
    write_report(&ctx.out.join("noise_selftest.txt"), ctx.meta, &body)?;
    let mut breaches = Vec::new();
    if stats.worst_z() > SELFTEST_Z {
        breaches.push(format!(
            "increment moments off by {:.2} standard errors",
            stats.worst_z()
        ));
    }
    if iso_z > SELFTEST_Z {
        breaches.push(format!("Ito isometry off by {iso_z:.2} standard errors"));
    }
    Ok(Verdict {
        summary: format!("worst_z={:.3} isometry_z={:.3}", stats.worst_z(), iso_z),
        breaches,
    })
}
