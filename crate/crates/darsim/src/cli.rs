//! `darsim` subcommands.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 invalid configuration,
//! 3 a verification suite failed.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use darsim_core::analytics::{
    bdar_lower_levels, bdar_upper_levels, erlang_b, fdar_critical_alpha, lower_levels_contract,
    poisson_tail, LevelSequence,
};
use darsim_core::{Capacity, PolicyKind};
use serde::Serialize;

use crate::config::{parse_config, ConfigError, ExperimentSpec, OutputFormat};
use crate::output::{self, Meta};
use crate::runner::{self, RunError};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

pub const SEED_ENV: &str = "DARSIM_SEED";

#[derive(Debug, Parser)]
#[command(name = "darsim", version, about = "Dynamic alternative routing simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment document (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides DARSIM_SEED, which overrides the document.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory; overrides `output_dir` in the document.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured replications and write the merged report.
    Simulate {
        /// Write replication 0's events as JSON lines to this file.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Run every point of the document's sweep and write a summary table.
    Sweep,
    /// Evaluate an analytic quantity.
    Theory(TheoryArgs),
    /// Run a verification suite; exits 3 on any violation.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TheoryOp {
    ErlangB,
    FdarAlpha,
    PoissonTail,
    UpperLevels,
    LowerLevels,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    op: TheoryOp,
    #[arg(long)]
    servers: Option<u32>,
    #[arg(long)]
    load: Option<f64>,
    #[arg(long = "K")]
    k: Option<f64>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    mu: Option<f64>,
    /// Threshold `D` of the Poisson tail `P(Po(mu) >= D)`.
    #[arg(long)]
    cap: Option<u32>,
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Coupling,
    Bounds,
    Erlang,
    Invariants,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Network size (coupling).
    #[arg(long)]
    n: Option<usize>,
    /// Events per run (coupling, invariants).
    #[arg(long)]
    events: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Link capacity, an integer or "infinite" (coupling).
    #[arg(long)]
    capacity: Option<String>,
    /// Candidates per call (coupling).
    #[arg(long)]
    d: Option<usize>,
    /// Restrict to one routing rule: fdar, bdar or uniform (coupling).
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    /// Number of sampled states (bounds).
    #[arg(long)]
    states: Option<usize>,
    /// Number of random configurations (invariants).
    #[arg(long)]
    configs: Option<usize>,
    /// Offered load (erlang).
    #[arg(long)]
    load: Option<f64>,
    #[arg(long)]
    servers: Option<u32>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Domain(#[from] darsim_core::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(ConfigError::Parse(_)) => EXIT_USAGE,
            CliError::Config(ConfigError::Validation(_)) | CliError::Domain(_) => EXIT_INVALID,
            CliError::Run(RunError::Sim(darsim_core::Error::Config(_))) => EXIT_INVALID,
            CliError::Run(_) | CliError::Io(_) => EXIT_USAGE,
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(&cli, env_seed.as_deref(), &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(cli: &Cli, env_seed: Option<&str>, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Simulate { trace } => {
            let spec = load_spec(&cli.global, env_seed)?;
            simulate(&cli.global, &spec, trace.as_deref(), out)?;
            Ok(EXIT_OK)
        }
        Command::Sweep => {
            let spec = load_spec(&cli.global, env_seed)?;
            sweep(&cli.global, &spec, out)?;
            Ok(EXIT_OK)
        }
        Command::Theory(args) => {
            theory(args, cli.global.format, out)?;
            Ok(EXIT_OK)
        }
        Command::Verify(args) => verify_suite(&cli.global, args, env_seed, out),
    }
}

/// Seed precedence: `--seed`, then `DARSIM_SEED`, then the document.
fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(text) => text
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {text:?}"))),
        None => Ok(config),
    }
}

fn load_spec(global: &Global, env_seed: Option<&str>) -> Result<ExperimentSpec, CliError> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --config PATH".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut spec = parse_config(&text)?;
    spec.base.seed = resolve_seed(global.seed, env_seed, spec.base.seed)?;
    if let Some(dir) = &global.output {
        spec.output_dir = dir.clone();
    }
    if let Some(f) = global.format {
        spec.format = f;
    }
    Ok(spec)
}

fn render(write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn simulate(
    global: &Global,
    spec: &ExperimentSpec,
    trace: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let pool = runner::pool(global.jobs.unwrap_or(0))?;
    let meta = Meta::for_spec(spec);
    let result = match trace {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut w = BufWriter::new(fs::File::create(path)?);
            let r = runner::run_replications(&pool, &spec.base, spec.replications, Some(&mut w))?;
            w.flush()?;
            r
        }
        None => runner::run_replications(&pool, &spec.base, spec.replications, None)?,
    };
    let dir = &spec.output_dir;
    output::write_file(
        &dir.join("report.json"),
        &render(|b| output::write_report_json(b, &meta, &spec.base, &result))?,
    )?;
    if spec.format == OutputFormat::Csv {
        output::write_file(
            &dir.join("snapshots.csv"),
            &render(|b| output::write_snapshots_csv(b, &meta, &result.report))?,
        )?;
    }
    let r = &result.report;
    writeln!(out, "replications: {}", result.replications)?;
    writeln!(out, "arrivals: {}", r.arrivals)?;
    writeln!(out, "blocked: {}", r.blocked)?;
    writeln!(out, "blocking_fraction: {}", r.blocking_fraction())?;
    if let Some(ci) = result.interval(output::CONFIDENCE) {
        writeln!(out, "wilson_95: [{}, {}]", ci.lo, ci.hi)?;
    }
    writeln!(out, "mean_total_calls: {}", r.mean_total_calls())?;
    writeln!(out, "peak_max_sat: {}", r.peak_max_sat)?;
    if spec.base.mode == darsim_core::engine::SimMode::Coupled {
        writeln!(out, "domination_violations: {}", result.violations)?;
    }
    writeln!(out, "output: {}", dir.display())?;
    Ok(())
}

fn sweep(global: &Global, spec: &ExperimentSpec, out: &mut dyn Write) -> Result<(), CliError> {
    let Some(sw) = &spec.sweep else {
        return Err(CliError::Config(ConfigError::Validation(
            "sweep needs a [sweep] table in the document".into(),
        )));
    };
    let pool = runner::pool(global.jobs.unwrap_or(0))?;
    let meta = Meta::for_spec(spec);
    let points = runner::run_sweep(&pool, spec)?;
    let dir = &spec.output_dir;
    for p in &points {
        let point_dir = dir.join(format!("{}-{}", sw.axis.name(), p.value));
        let config = spec.point_config(p.value);
        output::write_file(
            &point_dir.join("report.json"),
            &render(|b| output::write_report_json(b, &meta, &config, &p.result))?,
        )?;
        if spec.format == OutputFormat::Csv {
            output::write_file(
                &point_dir.join("snapshots.csv"),
                &render(|b| output::write_snapshots_csv(b, &meta, &p.result.report))?,
            )?;
        }
    }
    let rows = output::summary_rows(&points);
    match spec.format {
        OutputFormat::Csv => output::write_file(
            &dir.join("summary.csv"),
            &render(|b| output::write_summary_csv(b, &meta, sw.axis, &rows))?,
        )?,
        OutputFormat::Json => output::write_file(
            &dir.join("summary.json"),
            &render(|b| output::write_summary_json(b, &meta, sw.axis, &rows))?,
        )?,
    }
    out.write_all(output::summary_table(sw.axis, &rows).as_bytes())?;
    Ok(())
}

fn need<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("this operation needs --{flag}")))
}

#[derive(Serialize)]
struct Scalar<'a> {
    op: &'a str,
    value: f64,
}

fn theory(args: &TheoryArgs, format: Option<OutputFormat>, out: &mut dyn Write) -> Result<(), CliError> {
    let scalar = |out: &mut dyn Write, op: &str, value: f64| -> Result<(), CliError> {
        match format {
            Some(OutputFormat::Json) => writeln!(out, "{}", serde_json::to_string(&Scalar { op, value }).unwrap())?,
            Some(OutputFormat::Csv) => writeln!(out, "op,value\n{op},{value}")?,
            None => writeln!(out, "{value}")?,
        }
        Ok(())
    };
    match args.op {
        TheoryOp::ErlangB => {
            let b = erlang_b(need(args.servers, "servers")?, need(args.load, "load")?)?;
            scalar(out, "erlang-b", b)
        }
        TheoryOp::FdarAlpha => {
            let a = fdar_critical_alpha(need(args.k, "K")?, need(args.d, "d")?);
            scalar(out, "fdar-alpha", a)
        }
        TheoryOp::PoissonTail => {
            let p = poisson_tail(need(args.mu, "mu")?, need(args.cap, "cap")?)?;
            scalar(out, "poisson-tail", p)
        }
        TheoryOp::UpperLevels => {
            let seq = bdar_upper_levels(
                need(args.n, "n")?,
                need(args.lambda, "lambda")?,
                need(args.d, "d")?,
                need(args.k, "K")?,
            )?;
            levels(out, &seq, format)
        }
        TheoryOp::LowerLevels => {
            let seq = bdar_lower_levels(
                need(args.n, "n")?,
                need(args.lambda, "lambda")?,
                need(args.d, "d")?,
                need(args.epsilon, "epsilon")?,
            )?;
            levels(out, &seq, format)?;
            if format.is_none() {
                writeln!(out, "# contracts: {}", lower_levels_contract(&seq))?;
            }
            Ok(())
        }
    }
}

fn levels(out: &mut dyn Write, seq: &LevelSequence, format: Option<OutputFormat>) -> Result<(), CliError> {
    if format == Some(OutputFormat::Json) {
        writeln!(out, "{}", serde_json::to_string_pretty(seq).unwrap())?;
        return Ok(());
    }
    writeln!(out, "# h_start={} h_stop={}", seq.h_start, seq.h_stop)?;
    writeln!(out, "h,alpha,normalized")?;
    for l in &seq.values {
        writeln!(out, "{},{},{}", l.h, l.alpha, l.normalized)?;
    }
    Ok(())
}

fn verify_suite(
    global: &Global,
    args: &VerifyArgs,
    env_seed: Option<&str>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let seed = resolve_seed(global.seed, env_seed, 1)?;
    let outcome = match args.suite {
        Suite::Coupling => {
            let defaults = verify::CouplingParams::default();
            let capacity = match &args.capacity {
                Some(text) => parse_capacity(text)?,
                None => defaults.capacity,
            };
            verify::coupling(&verify::CouplingParams {
                n: args.n.unwrap_or(defaults.n),
                lambda: args.lambda.unwrap_or(defaults.lambda),
                capacity,
                d: args.d.unwrap_or(defaults.d),
                events: args.events.unwrap_or(defaults.events),
                seed,
                policies: args.policy.map(|p| vec![p]).unwrap_or(defaults.policies),
            })?
        }
        Suite::Bounds => {
            let defaults = verify::BoundsParams::default();
            verify::bounds(&verify::BoundsParams {
                states: args.states.unwrap_or(defaults.states),
                seed,
                events: args.events.unwrap_or(defaults.events),
            })?
        }
        Suite::Erlang => {
            let defaults = verify::ErlangParams::default();
            verify::erlang(&verify::ErlangParams {
                rate: args.load.unwrap_or(defaults.rate),
                servers: args.servers.unwrap_or(defaults.servers),
                horizon: args.horizon.unwrap_or(defaults.horizon),
                seed,
            })?
        }
        Suite::Invariants => {
            let defaults = verify::InvariantParams::default();
            verify::invariants(&verify::InvariantParams {
                configs: args.configs.unwrap_or(defaults.configs),
                events: args.events.unwrap_or(defaults.events),
                seed,
            })?
        }
    };
    writeln!(out, "{outcome}")?;
    Ok(if outcome.passed { EXIT_OK } else { EXIT_VERIFY })
}

fn parse_policy(text: &str) -> Result<PolicyKind, String> {
    text.parse().map_err(|_| format!("unknown policy {text:?} (expected fdar, bdar or uniform)"))
}

fn parse_capacity(text: &str) -> Result<Capacity, CliError> {
    if text.eq_ignore_ascii_case("infinite") || text.eq_ignore_ascii_case("inf") {
        return Ok(Capacity::Infinite);
    }
    match text.parse::<u32>() {
        Ok(c) if c >= 1 => Ok(Capacity::Finite(c)),
        _ => Err(CliError::Usage(format!("capacity must be a positive integer or \"infinite\", got {text:?}"))),
    }
}
