//! Experiment configuration as one flat JSON object.
//!
//! Environment keys are the [`EnvConfig`] field names verbatim (they already
//! carry their units). Trainer and bandit settings take a `dracm_`, `dqlm_` or
//! `mabts_` prefix. Every random choice derives from the single `seed`.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::HarnessError;
use crate::agents::{AgentKind, DqlmConfig, MabtsConfig};
use crate::dracm::TrainerConfig;
use crate::env::EnvConfig;
use crate::topology::GridSpec;

/// Which bounding box / server grid to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    Rome,
    Sf,
    Synthetic,
}

impl FromStr for GridChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rome" => Ok(Self::Rome),
            "sf" | "san_francisco" => Ok(Self::Sf),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(HarnessError::ConfigInvalid(format!("unknown grid {other:?}"))),
        }
    }
}

/// How a trace file is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// Canonical `id,slot,lat,lon` rows as written by `ingest`.
    Slots,
    Rome,
    /// One cab per file; the vehicle id is the file stem.
    Sf,
    IdLatLonTs,
}

/// Where traces come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    /// Random-waypoint walks generated from the experiment seed.
    Synthetic,
    File(PathBuf),
}

/// The single experiment axis varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// User task arrival rate, tasks per slot.
    UserRate,
    /// Midpoint of the processing-density range, cycles per bit; the width of
    /// the range is kept.
    KappaMidpoint,
    /// Constant migration coefficient, seconds per hop.
    Mc,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [Self::UserRate, Self::KappaMidpoint, Self::Mc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UserRate => "user_rate",
            Self::KappaMidpoint => "kappa_midpoint",
            Self::Mc => "mc",
        }
    }

    /// Config key listing this axis's values.
    pub fn key(self) -> &'static str {
        match self {
            Self::UserRate => "sweep_user_rate_tasks_per_slot",
            Self::KappaMidpoint => "sweep_kappa_midpoint_cycles_per_bit",
            Self::Mc => "sweep_mc_s_per_hop",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::UserRate => vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            Self::KappaMidpoint => vec![5_000.0, 6_000.0, 7_000.0, 8_000.0, 9_000.0],
            Self::Mc => (1..=7).map(f64::from).collect(),
        }
    }

    /// The environment with this axis set to `value`.
    pub fn apply(self, env: &EnvConfig, value: f64) -> Result<EnvConfig, HarnessError> {
        let mut out = env.clone();
        match self {
            Self::UserRate => out.user_rate_tasks_per_slot = value,
            Self::KappaMidpoint => {
                let [lo, hi] = env.kappa_range_cycles_per_bit;
                let half = (hi - lo) / 2.0;
                if value - half < 0.0 {
                    return Err(HarnessError::ConfigInvalid(format!(
                        "kappa midpoint {value} is below the range half-width {half}"
                    )));
                }
                out.kappa_range_cycles_per_bit = [value - half, value + half];
            }
            Self::Mc => out.mc_range_s_per_hop = [value, value],
        }
        out.validate()
            .map_err(|e| HarnessError::ConfigInvalid(format!("{} = {value}: {e}", self.as_str())))?;
        Ok(out)
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridChoice,
    /// Grid shape when `grid` is synthetic.
    pub synthetic_rows: usize,
    pub synthetic_cols: usize,
    pub agents: Vec<AgentKind>,
    pub trace_source: TraceSource,
    pub trace_format: TraceFormat,
    pub train_traces: usize,
    pub test_traces: usize,
    pub synthetic_speed_km_per_slot: [f64; 2],
    /// Evaluation episodes per test trace, each with its own workload seed.
    pub eval_episodes_per_trace: usize,
    pub sweep: Option<Sweep>,
    pub env: EnvConfig,
    pub dracm: TrainerConfig,
    pub dqlm: DqlmConfig,
    pub mabts: MabtsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GridChoice::Synthetic,
            synthetic_rows: 8,
            synthetic_cols: 8,
            agents: vec![AgentKind::Nm, AgentKind::Am, AgentKind::Mabts, AgentKind::Optim],
            trace_source: TraceSource::Synthetic,
            trace_format: TraceFormat::Slots,
            train_traces: 20,
            test_traces: 10,
            synthetic_speed_km_per_slot: [0.5, 1.5],
            eval_episodes_per_trace: 2,
            sweep: None,
            env: EnvConfig::default(),
            dracm: TrainerConfig::default(),
            dqlm: DqlmConfig::default(),
            mabts: MabtsConfig::default(),
        }
    }
}

/// Keys owned by the experiment itself (not forwarded to a sub-config).
const OWN_KEYS: [&str; 11] = [
    "seed",
    "grid",
    "synthetic_rows",
    "synthetic_cols",
    "agents",
    "trace_source",
    "trace_format",
    "train_traces",
    "test_traces",
    "synthetic_speed_km_per_slot",
    "eval_episodes_per_trace",
];

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::ConfigInvalid(msg.into())
}

fn object_of<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("config structs serialize to objects"),
    }
}

/// Moves every `prefix`-ed key that names a field of `template` out of `flat`
/// and deserializes the section on top of the template's defaults. The
/// `seed` field is never read from the file; it derives from the experiment
/// seed.
fn take_section<T>(flat: &mut Map<String, Value>, prefix: &str, template: &T) -> Result<T, HarnessError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut section = object_of(template);
    let fields: Vec<String> = section.keys().filter(|k| *k != "seed").cloned().collect();
    for field in fields {
        if let Some(v) = flat.remove(&format!("{prefix}{field}")) {
            section.insert(field, v);
        }
    }
    serde_json::from_value(Value::Object(section)).map_err(|e| invalid(format!("{prefix}*: {e}")))
}

fn take<T: for<'de> Deserialize<'de>>(flat: &mut Map<String, Value>, key: &str) -> Result<Option<T>, HarnessError> {
    flat.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| invalid(format!("{key}: {e}"))))
        .transpose()
}

impl ExperimentConfig {
    /// Parses a flat JSON object. `seed` must be present; unknown keys and
    /// more than one sweep axis are rejected.
    pub fn from_json_str(text: &str) -> Result<Self, HarnessError> {
        let value: Value = serde_json::from_str(text).map_err(|e| invalid(format!("not valid JSON: {e}")))?;
        let Value::Object(mut flat) = value else {
            return Err(invalid("config must be a JSON object"));
        };
        let d = Self::default();
        let seed: u64 = take(&mut flat, "seed")?.ok_or_else(|| invalid("seed must be given explicitly"))?;
        let grid = match take::<String>(&mut flat, "grid")? {
            Some(s) => s.parse()?,
            None => d.grid,
        };
        let agents = match take::<Vec<String>>(&mut flat, "agents")? {
            Some(list) => list
                .iter()
                .map(|s| s.parse::<AgentKind>().map_err(|_| invalid(format!("unknown agent {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?,
            None => d.agents.clone(),
        };
        let trace_source = match take::<String>(&mut flat, "trace_source")? {
            None => d.trace_source.clone(),
            Some(s) if s == "synthetic" => TraceSource::Synthetic,
            Some(path) => TraceSource::File(PathBuf::from(path)),
        };
        let mut sweeps = Vec::new();
        for axis in SweepAxis::ALL {
            if let Some(values) = take::<Vec<f64>>(&mut flat, axis.key())? {
                sweeps.push(Sweep { axis, values });
            }
        }
        if sweeps.len() > 1 {
            let names: Vec<_> = sweeps.iter().map(|s| s.axis.as_str()).collect();
            return Err(invalid(format!("at most one sweep axis may be set, got {names:?}")));
        }
        let mut cfg = Self {
            seed,
            grid,
            synthetic_rows: take(&mut flat, "synthetic_rows")?.unwrap_or(d.synthetic_rows),
            synthetic_cols: take(&mut flat, "synthetic_cols")?.unwrap_or(d.synthetic_cols),
            agents,
            trace_source,
            trace_format: take(&mut flat, "trace_format")?.unwrap_or(d.trace_format),
            train_traces: take(&mut flat, "train_traces")?.unwrap_or(d.train_traces),
            test_traces: take(&mut flat, "test_traces")?.unwrap_or(d.test_traces),
            synthetic_speed_km_per_slot: take(&mut flat, "synthetic_speed_km_per_slot")?
                .unwrap_or(d.synthetic_speed_km_per_slot),
            eval_episodes_per_trace: take(&mut flat, "eval_episodes_per_trace")?.unwrap_or(d.eval_episodes_per_trace),
            sweep: sweeps.pop(),
            dracm: take_section(&mut flat, "dracm_", &d.dracm)?,
            dqlm: take_section(&mut flat, "dqlm_", &d.dqlm)?,
            mabts: take_section(&mut flat, "mabts_", &d.mabts)?,
            env: d.env.clone(),
        };
        cfg.env = take_section(&mut flat, "", &d.env)?;
        if let Some(key) = flat.keys().next() {
            return Err(invalid(format!("unknown key {key:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// The fully resolved config as a flat JSON object, the inverse of
    /// [`ExperimentConfig::from_json_str`].
    pub fn to_flat_json(&self) -> Value {
        let mut flat = Map::new();
        let own = [
            ("seed", serde_json::json!(self.seed)),
            ("grid", serde_json::json!(self.grid)),
            ("synthetic_rows", serde_json::json!(self.synthetic_rows)),
            ("synthetic_cols", serde_json::json!(self.synthetic_cols)),
            (
                "agents",
                serde_json::json!(self.agents.iter().map(|a| a.as_str()).collect::<Vec<_>>()),
            ),
            (
                "trace_source",
                match &self.trace_source {
                    TraceSource::Synthetic => serde_json::json!("synthetic"),
                    TraceSource::File(p) => serde_json::json!(p.display().to_string()),
                },
            ),
            ("trace_format", serde_json::json!(self.trace_format)),
            ("train_traces", serde_json::json!(self.train_traces)),
            ("test_traces", serde_json::json!(self.test_traces)),
            ("synthetic_speed_km_per_slot", serde_json::json!(self.synthetic_speed_km_per_slot)),
            ("eval_episodes_per_trace", serde_json::json!(self.eval_episodes_per_trace)),
        ];
        debug_assert_eq!(own.len(), OWN_KEYS.len());
        for (k, v) in own {
            flat.insert(k.to_string(), v);
        }
        if let Some(sweep) = &self.sweep {
            flat.insert(sweep.axis.key().to_string(), serde_json::json!(sweep.values));
        }
        for (prefix, section) in [
            ("", object_of(&self.env)),
            ("dracm_", object_of(&self.dracm)),
            ("dqlm_", object_of(&self.dqlm)),
            ("mabts_", object_of(&self.mabts)),
        ] {
            for (k, v) in section {
                if prefix.is_empty() || k != "seed" {
                    flat.insert(format!("{prefix}{k}"), v);
                }
            }
        }
        Value::Object(flat)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate().map_err(|e| invalid(e.to_string()))?;
        self.dracm.validate().map_err(|e| invalid(e.to_string()))?;
        self.dqlm.validate().map_err(|e| invalid(e.to_string()))?;
        if self.agents.is_empty() {
            return Err(invalid("agent list is empty"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].contains(a) {
                return Err(invalid(format!("agent {a} listed twice")));
            }
        }
        if self.test_traces == 0 || self.eval_episodes_per_trace == 0 {
            return Err(invalid("test_traces and eval_episodes_per_trace must be positive"));
        }
        if self.grid == GridChoice::Synthetic && (self.synthetic_rows == 0 || self.synthetic_cols == 0) {
            return Err(invalid("synthetic grid needs positive rows and cols"));
        }
        let [lo, hi] = self.synthetic_speed_km_per_slot;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid("synthetic_speed_km_per_slot must satisfy 0 < low <= high"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid(format!("{} has no values", sweep.axis.key())));
            }
            for &v in &sweep.values {
                sweep.axis.apply(&self.env, v)?;
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        match self.grid {
            GridChoice::Rome => GridSpec::rome(),
            GridChoice::Sf => GridSpec::san_francisco(),
            GridChoice::Synthetic => GridSpec::synthetic(self.synthetic_rows, self.synthetic_cols),
        }
    }

    /// Trainer settings with the experiment seed filled in.
    pub fn dracm_config(&self) -> TrainerConfig {
        TrainerConfig {
            seed: self.seed,
            ..self.dracm.clone()
        }
    }

    pub fn dqlm_config(&self) -> DqlmConfig {
        DqlmConfig {
            seed: self.seed,
            ..self.dqlm.clone()
        }
    }

    pub fn mabts_config(&self) -> MabtsConfig {
        MabtsConfig {
            seed: self.seed,
            ..self.mabts
        }
    }

    /// `(axis, value)` pairs to run; a single unlabeled point without a sweep.
    pub fn sweep_points(&self) -> Vec<Option<(SweepAxis, f64)>> {
        match &self.sweep {
            None => vec![None],
            Some(s) => s.values.iter().map(|&v| Some((s.axis, v))).collect(),
        }
    }
}
