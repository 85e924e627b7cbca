//! Files written by the command-line runs. Every file starts with metadata
//! naming the experiment, the seed and the full configuration.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::basis::Boundary;
use crate::config::{Experiment, RunConfig};
use crate::dynamics::{CoupledState, NormRecord};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub experiment: Experiment,
    pub seed: u64,
    /// `flag`, `config`, `env` or `default`.
    pub seed_source: &'static str,
    pub seed_flag: Option<u64>,
    pub config: RunConfig,
}

impl Metadata {
    /// `# key: value` lines.
    pub fn header(&self) -> String {
        let opt = |s: Option<u64>| s.map_or_else(|| "none".to_string(), |v| v.to_string());
        format!(
            "# generator: klausmeier-spde {}\n# experiment: {}\n# seed: {}\n# seed_source: {}\n# seed_flag: {}\n# seed_config: {}\n# config: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.experiment.name(),
            self.seed,
            self.seed_source,
            opt(self.seed_flag),
            opt(self.config.seed),
            self.config.to_json()
        )
    }
}

/// Binary snapshots: one text line
/// `# klausmeier-snapshots d=.. n=.. boundary=.. fields=t,u,v encoding=f64le seed=.. config=..`
/// followed by `[t][u: n^d][v: n^d]` records of little-endian `f64`.
pub fn write_snapshots(
    path: &Path,
    meta: &Metadata,
    boundary: Boundary,
    states: &[&CoupledState],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let (d, n) = states
        .first()
        .map_or((meta.config.grid.d, meta.config.grid.n), |s| {
            (s.u.dim(), s.u.n())
        });
    writeln!(
        w,
        "# klausmeier-snapshots d={d} n={n} boundary={} fields=t,u,v encoding=f64le experiment={} seed={} config={}",
        boundary.name(),
        meta.experiment.name(),
        meta.seed,
        meta.config.to_json()
    )?;
    for s in states {
        w.write_all(&s.t.to_le_bytes())?;
        for x in s.u.values().iter().chain(s.v.values()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One decoded snapshot record.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Reads a snapshot file back; returns the header line and the records.
pub fn read_snapshots(path: &Path) -> Result<(String, Vec<SnapshotRecord>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| invalid("snapshot file has no header line"))?;
    let header = String::from_utf8_lossy(&bytes[..nl]).into_owned();
    let field = |key: &str| -> Result<usize> {
        header
            .split_whitespace()
            .find_map(|w| w.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| invalid(format!("snapshot header lacks {key}")))
    };
    let (d, n) = (field("d=")?, field("n=")?);
    let len = n.pow(d as u32);
    let record = 8 * (1 + 2 * len);
    let body = &bytes[nl + 1..];
    if body.len() % record != 0 {
        return Err(invalid("snapshot file is truncated"));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
    let records = body
        .chunks(record)
        .map(|r| {
            let vals: Vec<f64> = r.chunks(8).map(f).collect();
            SnapshotRecord {
                t: vals[0],
                u: vals[1..1 + len].to_vec(),
                v: vals[1 + len..].to_vec(),
            }
        })
        .collect();
    Ok((header, records))
}

pub const NORM_COLUMNS: &str = "t,u_l2,u_lgamma1,v_hrho,min_u,min_v,max_u,max_v,h";

/// Comma-separated norm series with full-precision floats.
pub fn write_norms(path: &Path, meta: &Metadata, norms: &[NormRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(meta.header().as_bytes())?;
    writeln!(w, "{NORM_COLUMNS}")?;
    for r in norms {
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t, r.u_l2, r.u_lgamma1, r.v_hrho, r.min_u, r.min_v, r.max_u, r.max_v, r.h
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Metadata header followed by `body` (`key: value` lines or a table).
pub fn write_report(path: &Path, meta: &Metadata, body: &str) -> Result<()> {
    fs::write(path, format!("{}{body}", meta.header()))?;
    Ok(())
}

/// `failure.txt`: `status`, `kind` and `message` keys after the header.
pub fn write_failure(path: &Path, meta: &Metadata, kind: &str, message: &str) -> Result<()> {
    let one_line = message.replace('\n', " ");
    write_report(
        path,
        meta,
        &format!("status: failure\nkind: {kind}\nmessage: {one_line}\n"),
    )
}

/// The effective configuration as TOML, with the resolved seed filled in
/// when TOML can hold it (seeds above `i64::MAX` stay in the header only).
pub fn write_config_echo(path: &Path, meta: &Metadata) -> Result<()> {
    let mut cfg = meta.config.clone();
    cfg.seed = (meta.seed <= i64::MAX as u64).then_some(meta.seed);
    cfg.experiment = Some(meta.experiment);
    fs::write(path, format!("{}{}", meta.header(), cfg.to_toml()))?;
    Ok(())
}
