//! Data files. Every file carries the configuration hash, the master seed
//! and the code version; nothing in them depends on wall-clock time or the
//! number of workers.
//!
//! CSV files start with `# key=value` comment lines followed by the fixed
//! header row. JSON files have a top-level `meta` object.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use darsim_core::engine::SimConfig;
use darsim_core::metrics::{Interval, MetricsReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentSpec, SweepAxis};
use crate::runner::{Replicated, SweepPoint};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONFIDENCE: f64 = 0.95;

pub const SNAPSHOT_HEADER: [&str; 6] =
    ["time", "total_calls", "max_sat", "mean_sat_at", "mean_sat_via", "blocked_cum"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
}

/// Parts of an experiment that determine the data; the output location does not.
#[derive(Serialize)]
struct HashedSpec<'a> {
    base: &'a SimConfig,
    sweep: &'a Option<crate::config::Sweep>,
    replications: u32,
}

impl Meta {
    pub fn for_spec(spec: &ExperimentSpec) -> Self {
        let hashed = HashedSpec { base: &spec.base, sweep: &spec.sweep, replications: spec.replications };
        let bytes = serde_json::to_vec(&hashed).expect("config serialises");
        Meta {
            config_hash: hex::encode(Sha256::digest(&bytes)),
            master_seed: spec.base.seed,
            code_version: CODE_VERSION.to_string(),
        }
    }

    fn csv_preamble(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# config_hash={}", self.config_hash)?;
        writeln!(out, "# master_seed={}", self.master_seed)?;
        writeln!(out, "# code_version={}", self.code_version)
    }
}

fn csv_error(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_snapshots_csv(out: &mut impl Write, meta: &Meta, report: &MetricsReport) -> io::Result<()> {
    meta.csv_preamble(out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SNAPSHOT_HEADER).map_err(csv_error)?;
    for s in &report.snapshots {
        w.write_record([
            s.time.to_string(),
            s.total_calls.to_string(),
            s.max_sat.to_string(),
            s.mean_sat_at().to_string(),
            s.mean_sat_via().to_string(),
            s.blocked_cum.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    meta: &'a Meta,
    config: &'a SimConfig,
    replications: u32,
    events: u64,
    blocking_fraction: f64,
    interval: Option<Interval>,
    mean_total_calls: f64,
    report: &'a MetricsReport,
}

pub fn write_report_json(
    out: &mut impl Write,
    meta: &Meta,
    config: &SimConfig,
    result: &Replicated,
) -> io::Result<()> {
    let doc = ReportDocument {
        meta,
        config,
        replications: result.replications,
        events: result.events,
        blocking_fraction: result.report.blocking_fraction(),
        interval: result.interval(CONFIDENCE),
        mean_total_calls: result.report.mean_total_calls(),
        report: &result.report,
    };
    serde_json::to_writer_pretty(&mut *out, &doc)?;
    writeln!(out)
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub value: String,
    pub arrivals: u64,
    pub blocked: u64,
    pub blocking_fraction: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

pub fn summary_rows(points: &[SweepPoint]) -> Vec<SummaryRow> {
    points
        .iter()
        .map(|p| {
            let ci = p.result.interval(CONFIDENCE);
            SummaryRow {
                value: p.value.to_string(),
                arrivals: p.result.report.arrivals,
                blocked: p.result.report.blocked,
                blocking_fraction: p.result.report.blocking_fraction(),
                ci_lo: ci.map(|c| c.lo),
                ci_hi: ci.map(|c| c.hi),
            }
        })
        .collect()
}

pub fn write_summary_csv(
    out: &mut impl Write,
    meta: &Meta,
    axis: SweepAxis,
    rows: &[SummaryRow],
) -> io::Result<()> {
    meta.csv_preamble(out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([axis.name(), "blocking_fraction", "ci_lo", "ci_hi", "arrivals", "blocked"])
        .map_err(csv_error)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.value.clone(),
            r.blocking_fraction.to_string(),
            opt(r.ci_lo),
            opt(r.ci_hi),
            r.arrivals.to_string(),
            r.blocked.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    meta: &'a Meta,
    axis: SweepAxis,
    confidence: f64,
    rows: &'a [SummaryRow],
}

pub fn write_summary_json(
    out: &mut impl Write,
    meta: &Meta,
    axis: SweepAxis,
    rows: &[SummaryRow],
) -> io::Result<()> {
    let doc = SummaryDocument { meta, axis, confidence: CONFIDENCE, rows };
    serde_json::to_writer_pretty(&mut *out, &doc)?;
    writeln!(out)
}

/// Plain-text table for the terminal.
pub fn summary_table(axis: SweepAxis, rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:>10} {:>12} {:>12} {:>12} {:>10}\n",
        axis.name(),
        "blocking",
        "ci_lo",
        "ci_hi",
        "arrivals"
    );
    for r in rows {
        let ci = |x: Option<f64>| x.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:>10} {:>12.4e} {:>12} {:>12} {:>10}\n",
            r.value,
            r.blocking_fraction,
            ci(r.ci_lo),
            ci(r.ci_hi),
            r.arrivals
        ));
    }
    s
}

/// Writes `bytes` to `path` through a temporary sibling, creating parent
/// directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::runner::{pool, run_replications};

    const DOC: &str = "n = 8\nlambda = 1.0\nd = 2\ncapacity = 2\npolicy = \"fdar\"\nhorizon = 10\nwarmup = 2\nseed = 3\nsnapshot_every = 1.0\n";

    #[test]
    fn csv_has_preamble_and_fixed_header() {
        let spec = parse_config(DOC).unwrap();
        let meta = Meta::for_spec(&spec);
        let r = run_replications(&pool(1).unwrap(), &spec.base, 2, None).unwrap();
        let mut buf = Vec::new();
        write_snapshots_csv(&mut buf, &meta, &r.report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# config_hash={}", meta.config_hash));
        assert_eq!(lines.next().unwrap(), "# master_seed=3");
        assert!(lines.next().unwrap().starts_with("# code_version="));
        assert_eq!(lines.next().unwrap(), "time,total_calls,max_sat,mean_sat_at,mean_sat_via,blocked_cum");
        // Snapshots at 2, 3, ..., 10 for each of two replications.
        assert_eq!(lines.count(), 18);

        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows[0][0].parse::<f64>().unwrap(), 2.0);
    }

    #[test]
    fn hash_ignores_output_location_but_not_seed() {
        let a = parse_config(DOC).unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(Meta::for_spec(&a), Meta::for_spec(&b));
        let c = a.clone().with_seed(4);
        assert_ne!(Meta::for_spec(&a).config_hash, Meta::for_spec(&c).config_hash);
        assert_eq!(Meta::for_spec(&a).config_hash.len(), 64);
    }
}
