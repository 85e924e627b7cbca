use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use klausmeier_spde::config::{load_config, Experiment};
use klausmeier_spde::run::{run, RunOptions, EXIT_ERROR};

/// Simulations and diagnostics for the stochastic Klausmeier system.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// simulate, picard, glue, ensemble, uniqueness, validate,
    /// noise-selftest or pattern-demo; defaults to `experiment` in the config.
    experiment: Option<Experiment>,

    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Master seed; overrides the config and KLAUSMEIER_SEED.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory; overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// `section.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads for ensemble runs (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli.config, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let Some(experiment) = cli.experiment.or(cfg.experiment) else {
        eprintln!("error: no experiment given on the command line or in the config");
        return ExitCode::from(EXIT_ERROR as u8);
    };
    let outcome = run(
        experiment,
        cfg,
        &RunOptions {
            seed: cli.seed,
            out_dir: cli.out,
            workers: cli.workers,
        },
    );
    println!("{}", outcome.summary);
    ExitCode::from(outcome.status as u8)
}
