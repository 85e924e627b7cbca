use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use klausmeier_spde::output::read_snapshots;

const CONFIG: &str = r#"
[grid]
d = 1
n = 16

[model]
gamma = 3.0
sigma1 = 0.5
sigma2 = 0.5

[solver]
dt = 0.005
t_end = 0.1
"#;

fn klausmeier(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let cfg = dir.join("run.toml");
    if !cfg.exists() {
        fs::write(&cfg, CONFIG).unwrap();
    }
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_klausmeier"));
    cmd.args(args)
        .arg("--config")
        .arg(&cfg)
        .env_remove("KLAUSMEIER_SEED");
    if let Some(s) = env_seed {
        cmd.env("KLAUSMEIER_SEED", s);
    }
    cmd.output().unwrap()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a", "b"] {
        let o = klausmeier(
            d,
            &["simulate", "--seed", "17", "--out", &out_arg(d, name)],
            None,
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stdout)
        );
        assert!(String::from_utf8_lossy(&o.stdout).contains("seed=17"));
    }
    let o = klausmeier(
        d,
        &["simulate", "--seed", "18", "--out", &out_arg(d, "c")],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let read = |n: &str, f: &str| fs::read(d.join(n).join(f)).unwrap();
    assert_eq!(read("a", "norms.csv"), read("b", "norms.csv"));
    assert_eq!(read("a", "snapshots.bin"), read("b", "snapshots.bin"));
    assert_ne!(read("a", "norms.csv"), read("c", "norms.csv"));

    let (header, records) = read_snapshots(&d.join("a/snapshots.bin")).unwrap();
    assert!(header.contains("d=1 n=16 boundary=periodic fields=t,u,v"));
    assert_eq!(records.len(), 21);
    assert_eq!(records[20].u.len(), 16);
    assert!((records[20].t - 0.1).abs() < 1e-12);
}

#[test]
fn seed_sources_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let header = |name: &str| fs::read_to_string(d.join(name).join("norms.csv")).unwrap();

    klausmeier(
        d,
        &[
            "simulate",
            "--out",
            &out_arg(d, "env"),
            "--override",
            "seed=5",
        ],
        Some("9"),
    );
    let h = header("env");
    assert!(
        h.contains("# seed: 5\n# seed_source: config\n# seed_flag: none\n# seed_config: 5"),
        "{h}"
    );

    klausmeier(
        d,
        &[
            "simulate",
            "--out",
            &out_arg(d, "flag"),
            "--seed",
            "3",
            "--override",
            "seed=5",
        ],
        Some("9"),
    );
    assert!(
        header("flag").contains("# seed: 3\n# seed_source: flag\n# seed_flag: 3\n# seed_config: 5")
    );

    klausmeier(d, &["simulate", "--out", &out_arg(d, "var")], Some("9"));
    assert!(header("var").contains("# seed: 9\n# seed_source: env"));

    klausmeier(d, &["simulate", "--out", &out_arg(d, "none")], None);
    assert!(header("none").contains("# seed: 0\n# seed_source: default"));

    let echo = fs::read_to_string(d.join("flag/config.toml")).unwrap();
    assert!(echo.contains("seed = 3"));
}

#[test]
fn zero_horizon_writes_one_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = klausmeier(
        d,
        &[
            "simulate",
            "--out",
            &out_arg(d, "t0"),
            "--override",
            "solver.t_end=0.0",
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let (_, records) = read_snapshots(&d.join("t0/snapshots.bin")).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].t, 0.0);
}

#[test]
fn validate_reports_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = klausmeier(d, &["validate", "--out", &out_arg(d, "ok")], None);
    assert_eq!(o.status.code(), Some(0));
    let report = fs::read_to_string(d.join("ok/validate.txt")).unwrap();
    assert!(report.contains("rho_upper: pass"));
    assert!(report.contains("existence: true"));

    let o = klausmeier(
        d,
        &[
            "validate",
            "--out",
            &out_arg(d, "bad"),
            "--override",
            "hypothesis.rho=0.6",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    let failure = fs::read_to_string(d.join("bad/failure.txt")).unwrap();
    assert!(failure.contains("kind: invariant"));
    assert!(failure.contains("rho_upper"));
}

#[test]
fn uniqueness_in_two_dimensions_is_refused_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = klausmeier(
        d,
        &[
            "uniqueness",
            "--out",
            &out_arg(d, "u2"),
            "--override",
            "grid.d=2",
            "--override",
            "hypothesis.rho=-0.5",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let failure = fs::read_to_string(d.join("u2/failure.txt")).unwrap();
    assert!(failure.contains("refused"), "{failure}");
    assert!(failure.contains("dimension_uniqueness"));
    assert!(!d.join("u2/uniqueness.txt").exists());
}

#[test]
fn bad_input_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = klausmeier(d, &["simulate", "--override", "model.gama=3"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));

    let o = klausmeier(d, &[], None);
    assert_eq!(o.status.code(), Some(1));

    let o = klausmeier(
        d,
        &[
            "simulate",
            "--out",
            &out_arg(d, "dt"),
            "--override",
            "solver.dt=0.003",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let failure = fs::read_to_string(d.join("dt/failure.txt")).unwrap();
    assert!(failure.contains("kind: error") && failure.contains("multiple"));
}

#[test]
fn every_experiment_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (exp, file) in [
        ("picard", "picard.txt"),
        ("glue", "glue.txt"),
        ("ensemble", "ensemble.txt"),
        ("uniqueness", "uniqueness.txt"),
        ("noise-selftest", "noise_selftest.txt"),
    ] {
        let o = klausmeier(d, &[exp, "--out", &out_arg(d, exp), "--workers", "2"], None);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{exp}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
        let text = fs::read_to_string(d.join(exp).join(file)).unwrap();
        assert!(text.starts_with("# generator: klausmeier-spde"));
    }
    let o = klausmeier(
        d,
        &[
            "pattern-demo",
            "--out",
            &out_arg(d, "pattern"),
            "--override",
            "model.rain=2",
            "--override",
            "model.evaporation=1",
            "--override",
            "model.mortality=0.5",
            "--override",
            "initial.u={preset=\"perturbed-homogeneous\", amplitude=0.01}",
            "--override",
            "initial.v={preset=\"perturbed-homogeneous\"}",
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(fs::read_to_string(d.join("pattern/pattern.txt"))
        .unwrap()
        .contains("dominant_mode"));
}
