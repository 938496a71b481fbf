//! Experiment documents.
//!
//! A document is TOML with the simulation parameters at top level and an
//! optional `[sweep]` table:
//!
//! ```toml
//! n = 100
//! lambda = 1.0
//! d = 2
//! capacity = 6          # or "infinite"
//! policy = "bdar"       # fdar | bdar | uniform
//! horizon = 150
//! warmup = 50           # default 10 ln n
//! seed = 7
//! replications = 10
//!
//! [sweep]
//! axis = "capacity"     # capacity | d | lambda | n | policy
//! values = [2, 3, 4]
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use darsim_core::engine::{default_warmup, SimConfig, SimMode};
use darsim_core::{Capacity, PolicyKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Capacity,
    D,
    Lambda,
    N,
    Policy,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Capacity => "capacity",
            SweepAxis::D => "d",
            SweepAxis::Lambda => "lambda",
            SweepAxis::N => "n",
            SweepAxis::Policy => "policy",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "capacity" => SweepAxis::Capacity,
            "d" => SweepAxis::D,
            "lambda" => SweepAxis::Lambda,
            "n" => SweepAxis::N,
            "policy" => SweepAxis::Policy,
            other => {
                return Err(ConfigError::Validation(format!(
                    "sweep.axis must be one of capacity, d, lambda, n, policy (got {other:?})"
                )))
            }
        })
    }
}

/// One point on a sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AxisValue {
    Capacity(Capacity),
    D(usize),
    Lambda(f64),
    N(usize),
    Policy(PolicyKind),
}

impl AxisValue {
    fn sort_key(&self) -> (u8, f64, &'static str) {
        match *self {
            AxisValue::Capacity(Capacity::Finite(c)) => (0, c as f64, ""),
            AxisValue::Capacity(Capacity::Infinite) => (1, 0.0, ""),
            AxisValue::D(x) | AxisValue::N(x) => (0, x as f64, ""),
            AxisValue::Lambda(x) => (0, x, ""),
            AxisValue::Policy(p) => (0, 0.0, p.name()),
        }
    }
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Capacity(c) => write!(f, "{c}"),
            AxisValue::D(x) | AxisValue::N(x) => write!(f, "{x}"),
            AxisValue::Lambda(x) => write!(f, "{x}"),
            AxisValue::Policy(p) => f.write_str(p.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    /// Sorted by axis value, duplicates removed.
    pub values: Vec<AxisValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    pub sweep: Option<Sweep>,
    pub replications: u32,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
    /// Whether `warmup` was given; otherwise it follows `n` across a sweep.
    pub warmup_given: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    n: usize,
    lambda: f64,
    d: usize,
    capacity: Capacity,
    policy: PolicyKind,
    horizon: f64,
    warmup: Option<f64>,
    seed: Option<u64>,
    snapshot_every: Option<f64>,
    full_snapshots: Option<bool>,
    mode: Option<SimMode>,
    max_events: Option<u64>,
    audit: Option<bool>,
    replications: Option<u32>,
    output_dir: Option<PathBuf>,
    format: Option<OutputFormat>,
    sweep: Option<RawSweep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: String,
    values: Vec<toml::Value>,
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let raw: RawDocument = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut base = SimConfig::new(
        raw.n,
        raw.lambda,
        raw.d,
        raw.capacity,
        raw.policy,
        raw.horizon,
        raw.seed.unwrap_or(0),
    );
    if let Some(w) = raw.warmup {
        base.warmup = w;
    }
    base.snapshot_every = raw.snapshot_every.unwrap_or(0.0);
    base.full_snapshots = raw.full_snapshots.unwrap_or(false);
    base.mode = raw.mode.unwrap_or(SimMode::Capacitated);
    base.max_events = raw.max_events;
    base.audit = raw.audit.unwrap_or(false);

    let sweep = raw.sweep.map(parse_sweep).transpose()?;
    let spec = ExperimentSpec {
        base,
        sweep,
        replications: raw.replications.unwrap_or(1),
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        format: raw.format.unwrap_or(OutputFormat::Csv),
        warmup_given: raw.warmup.is_some(),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_sweep(raw: RawSweep) -> Result<Sweep, ConfigError> {
    let axis: SweepAxis = raw.axis.parse()?;
    let mut values = raw
        .values
        .into_iter()
        .map(|v| axis_value(axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    values.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(kb.2))
    });
    values.dedup();
    Ok(Sweep { axis, values })
}

fn axis_value(axis: SweepAxis, value: toml::Value) -> Result<AxisValue, ConfigError> {
    let bad = |e: &dyn fmt::Display| {
        ConfigError::Validation(format!("sweep value for axis {}: {e}", axis.name()))
    };
    Ok(match axis {
        SweepAxis::Capacity => AxisValue::Capacity(value.try_into().map_err(|e| bad(&e))?),
        SweepAxis::D => AxisValue::D(value.try_into().map_err(|e| bad(&e))?),
        SweepAxis::N => AxisValue::N(value.try_into().map_err(|e| bad(&e))?),
        SweepAxis::Lambda => AxisValue::Lambda(match value {
            toml::Value::Integer(i) => i as f64,
            toml::Value::Float(x) => x,
            other => return Err(bad(&format!("expected a number, got {other}"))),
        }),
        SweepAxis::Policy => AxisValue::Policy(value.try_into().map_err(|e| bad(&e))?),
    })
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replications < 1 {
            return Err(ConfigError::Validation("replications >= 1".into()));
        }
        match &self.sweep {
            None => check(&self.base),
            Some(sweep) => {
                if sweep.values.is_empty() {
                    return Err(ConfigError::Validation("sweep.values must not be empty".into()));
                }
                sweep.values.iter().try_for_each(|&v| check(&self.point_config(v)))
            }
        }
    }

    /// Base configuration with one axis value substituted.
    pub fn point_config(&self, value: AxisValue) -> SimConfig {
        let mut c = self.base.clone();
        match value {
            AxisValue::Capacity(x) => c.capacity = x,
            AxisValue::D(x) => c.d = x,
            AxisValue::Lambda(x) => c.lambda = x,
            AxisValue::N(x) => {
                c.n = x;
                if !self.warmup_given {
                    c.warmup = default_warmup(x);
                }
            }
            AxisValue::Policy(x) => c.policy = x,
        }
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base.seed = seed;
        self
    }
}

fn check(config: &SimConfig) -> Result<(), ConfigError> {
    config.validate().map_err(|e| match e {
        darsim_core::Error::Config(msg) => ConfigError::Validation(msg),
        other => ConfigError::Validation(other.to_string()),
    })
}
