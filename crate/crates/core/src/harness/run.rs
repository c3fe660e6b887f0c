//! The experiment pipeline: resolve traces, train the learning agents, score
//! the roster on shared episodes at every sweep point, and write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::compare::compare_agents;
use super::config::{ExperimentConfig, SweepAxis, TraceFormat, TraceSource};
use super::HarnessError;
use crate::agents::{Agent, AgentKind, AlwaysMigrate, DqlmAgent, DqlmTrainer, MabtsAgent, NeverMigrate, OptimAgent};
use crate::dracm::{DracmAgent, DracmTrainer};
use crate::env::{keyed_stream, EnvConfig};
use crate::tensorcore::save_checkpoint;
use crate::topology::GridSpec;
use crate::traces::{
    load_slot_traces, parse_trace_file, resample_to_slots, split_train_test, synth_trace, trace_in_grid, FormatSpec,
    IngestReport, SlotTrace, SLOT_SECONDS,
};

pub const METRICS_CSV: &str = "metrics.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const INGEST_REPORT_JSON: &str = "ingest_report.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const PURPOSE_TRAIN_TRACES: u64 = 0x30;
const PURPOSE_TEST_TRACES: u64 = 0x31;
const PURPOSE_EVAL_SEEDS: u64 = 0x32;

/// A 64-bit seed derived from the experiment seed for one purpose and index.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    keyed_stream(seed, purpose, index, 0).random()
}

/// Workload seeds shared by every agent; each test trace is played once per seed.
pub fn eval_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.eval_episodes_per_trace as u64)
        .map(|k| derive_seed(cfg.seed, PURPOSE_EVAL_SEEDS, k))
        .collect()
}

/// Reads a trace file in any supported layout; raw GPS dumps are resampled
/// into slot traces of at least `horizon` slots.
pub fn ingest_file(
    path: &Path,
    format: TraceFormat,
    grid: &GridSpec,
    horizon: usize,
) -> Result<(Vec<SlotTrace>, IngestReport), HarnessError> {
    if !path.exists() {
        return Err(HarnessError::TraceSourceMissing(path.to_path_buf()));
    }
    let spec = match format {
        TraceFormat::Slots => {
            let traces = load_slot_traces(path)?;
            let report = IngestReport {
                fixes: traces.iter().map(SlotTrace::len).sum(),
                vehicles: traces.len(),
                traces: traces.len(),
                ..IngestReport::default()
            };
            return Ok((traces, report));
        }
        TraceFormat::Rome => FormatSpec::rome(),
        TraceFormat::IdLatLonTs => FormatSpec::id_lat_lon_ts(),
        TraceFormat::Sf => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "cab".to_string());
            FormatSpec::san_francisco(stem)
        }
    };
    let parsed = parse_trace_file(path, &spec)?;
    let (traces, mut report) = resample_to_slots(&parsed.fixes, grid, horizon, SLOT_SECONDS);
    report.malformed_lines = parsed.malformed.len();
    report.malformed = parsed.malformed;
    Ok((traces, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTraces {
    pub train: Vec<SlotTrace>,
    pub test: Vec<SlotTrace>,
    /// Present when traces were read from a file.
    pub report: Option<IngestReport>,
}

/// Training and test traces for the config: seeded random-waypoint walks, or
/// the usable traces of a file split deterministically by id hash.
pub fn resolve_traces(cfg: &ExperimentConfig) -> Result<ResolvedTraces, HarnessError> {
    let grid = cfg.grid_spec();
    let horizon = cfg.env.horizon_slots;
    let resolved = match &cfg.trace_source {
        TraceSource::Synthetic => {
            let make = |purpose: u64, n: usize| -> Result<Vec<SlotTrace>, HarnessError> {
                (0..n as u64)
                    .map(|i| {
                        let seed = derive_seed(cfg.seed, purpose, i);
                        Ok(synth_trace(seed, &grid, horizon, cfg.synthetic_speed_km_per_slot)?)
                    })
                    .collect()
            };
            ResolvedTraces {
                train: make(PURPOSE_TRAIN_TRACES, cfg.train_traces)?,
                test: make(PURPOSE_TEST_TRACES, cfg.test_traces)?,
                report: None,
            }
        }
        TraceSource::File(path) => {
            let (all, report) = ingest_file(path, cfg.trace_format, &grid, horizon)?;
            let usable: Vec<SlotTrace> = all
                .into_iter()
                .filter(|t| t.len() >= horizon && trace_in_grid(t, &grid))
                .collect();
            let (train, test) = split_train_test(&usable, cfg.train_traces, cfg.test_traces);
            ResolvedTraces {
                train,
                test,
                report: Some(report),
            }
        }
    };
    if resolved.test.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    Ok(resolved)
}

/// One training iteration of one learning agent, as a metrics CSV row.
/// DQLM reports its TD loss under `critic_loss` and has no actor or entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sweep_axis: Option<String>,
    pub sweep_value: Option<f64>,
    pub agent: String,
    pub iteration: usize,
    pub mean_latency_s: f64,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub wall_s: f64,
}

const METRICS_HEADER: [&str; 9] = [
    "sweep_axis",
    "sweep_value",
    "agent",
    "iteration",
    "mean_latency_s",
    "actor_loss",
    "critic_loss",
    "entropy",
    "wall_s",
];

/// One comparison-table row at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub sweep_axis: Option<String>,
    pub sweep_value: Option<f64>,
    pub agent: String,
    pub episodes: usize,
    pub mean_latency_s: f64,
    pub std_latency_s: f64,
    pub migration_s: f64,
    pub computation_s: f64,
    pub access_s: f64,
    pub backhaul_s: f64,
    pub optimality_gap: Option<f64>,
}

pub(super) const COMPARISON_HEADER: [&str; 11] = [
    "sweep_axis",
    "sweep_value",
    "agent",
    "episodes",
    "mean_latency_s",
    "std_latency_s",
    "migration_s",
    "computation_s",
    "access_s",
    "backhaul_s",
    "optimality_gap",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub comparison: Vec<ComparisonRecord>,
    pub checkpoints: Vec<PathBuf>,
}

pub(super) fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct Trained {
    dracm: Option<DracmAgent>,
    dqlm: Option<DqlmAgent>,
}

fn point_label(point: Option<(SweepAxis, f64)>) -> (Option<String>, Option<f64>, String) {
    match point {
        None => (None, None, String::new()),
        Some((axis, v)) => (Some(axis.as_str().to_string()), Some(v), format!("_{}_{v}", axis.as_str())),
    }
}

/// Trains whichever learning agents the roster lists, saving a checkpoint
/// of each.
fn train_point(
    cfg: &ExperimentConfig,
    env: &EnvConfig,
    grid: &GridSpec,
    train: &[SlotTrace],
    point: Option<(SweepAxis, f64)>,
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<(Trained, Vec<MetricsRecord>, Vec<PathBuf>), HarnessError> {
    let (axis, value, suffix) = point_label(point);
    let mut trained = Trained::default();
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    if cfg.agents.contains(&AgentKind::Dracm) {
        let mut trainer = DracmTrainer::new(cfg.dracm_config(), env.clone(), grid.clone(), train.to_vec())?;
        let reports = trainer.train(|r| {
            if (r.iteration + 1) % 10 == 0 || r.iteration == 0 {
                log(&format!(
                    "DRACM{suffix} iteration {:>4}: mean latency {:.3} s, entropy {:.3}",
                    r.iteration + 1,
                    r.mean_latency_s,
                    r.entropy
                ));
            }
        })?;
        metrics.extend(reports.iter().map(|r| MetricsRecord {
            sweep_axis: axis.clone(),
            sweep_value: value,
            agent: AgentKind::Dracm.to_string(),
            iteration: r.iteration,
            mean_latency_s: r.mean_latency_s,
            actor_loss: Some(r.actor_loss),
            critic_loss: Some(r.critic_loss),
            entropy: Some(r.entropy),
            wall_s: r.wall_s,
        }));
        fs::create_dir_all(&ckpt_dir)?;
        let base = ckpt_dir.join(format!("dracm{suffix}"));
        save_checkpoint(trainer.store(), &base)?;
        checkpoints.push(base);
        trained.dracm = Some(trainer.agent());
    }
    if cfg.agents.contains(&AgentKind::Dqlm) {
        let mut trainer = DqlmTrainer::new(cfg.dqlm_config(), env.clone(), grid.clone(), train.to_vec())?;
        let reports = trainer.train(|r| {
            if (r.iteration + 1) % 10 == 0 || r.iteration == 0 {
                log(&format!(
                    "DQLM{suffix} iteration {:>4}: mean latency {:.3} s, epsilon {:.3}",
                    r.iteration + 1,
                    r.mean_latency_s,
                    r.epsilon
                ));
            }
        })?;
        metrics.extend(reports.iter().map(|r| MetricsRecord {
            sweep_axis: axis.clone(),
            sweep_value: value,
            agent: AgentKind::Dqlm.to_string(),
            iteration: r.iteration,
            mean_latency_s: r.mean_latency_s,
            actor_loss: None,
            critic_loss: Some(r.td_loss),
            entropy: None,
            wall_s: r.wall_s,
        }));
        fs::create_dir_all(&ckpt_dir)?;
        let base = ckpt_dir.join(format!("dqlm{suffix}"));
        save_checkpoint(trainer.store(), &base)?;
        checkpoints.push(base);
        trained.dqlm = Some(trainer.agent());
    }
    Ok((trained, metrics, checkpoints))
}

fn build_roster(cfg: &ExperimentConfig, grid: &GridSpec, trained: &mut Trained) -> Vec<Box<dyn Agent>> {
    cfg.agents
        .iter()
        .map(|kind| -> Box<dyn Agent> {
            match kind {
                AgentKind::Nm => Box::new(NeverMigrate::new()),
                AgentKind::Am => Box::new(AlwaysMigrate),
                AgentKind::Mabts => Box::new(MabtsAgent::new(grid.num_servers(), cfg.mabts_config())),
                AgentKind::Optim => Box::new(OptimAgent::new()),
                AgentKind::Dqlm => Box::new(trained.dqlm.take().expect("trained when listed")),
                AgentKind::Dracm => Box::new(trained.dracm.take().expect("trained when listed")),
            }
        })
        .collect()
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path, report: Option<&IngestReport>) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_JSON), serde_json::to_string_pretty(&cfg.to_flat_json())? + "\n")?;
    if let Some(report) = report {
        fs::write(out.join(INGEST_REPORT_JSON), serde_json::to_string_pretty(report)? + "\n")?;
    }
    Ok(())
}

/// [`run_with`] without progress messages.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunArtifacts, HarnessError> {
    run_with(cfg, out, &mut |_| {})
}

/// Full experiment: at every sweep point, train the listed learning agents,
/// then score the whole roster on shared test episodes. Writes the config
/// echo, metrics and comparison CSVs, and checkpoints under `out`.
/// Identical configs give identical files apart from the `wall_s` column.
pub fn run_with(cfg: &ExperimentConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    let traces = resolve_traces(cfg)?;
    prepare_out(cfg, out, traces.report.as_ref())?;
    let grid = cfg.grid_spec();
    let seeds = eval_seeds(cfg);
    let mut artifacts = RunArtifacts {
        out_dir: out.to_path_buf(),
        metrics: Vec::new(),
        comparison: Vec::new(),
        checkpoints: Vec::new(),
    };
    for point in cfg.sweep_points() {
        let env = match point {
            None => cfg.env.clone(),
            Some((axis, v)) => axis.apply(&cfg.env, v)?,
        };
        let (mut trained, metrics, checkpoints) = train_point(cfg, &env, &grid, &traces.train, point, out, log)?;
        artifacts.metrics.extend(metrics);
        artifacts.checkpoints.extend(checkpoints);
        let mut roster = build_roster(cfg, &grid, &mut trained);
        let rows = compare_agents(&mut roster, &env, &grid, &traces.test, &seeds)?;
        let (axis, value, _) = point_label(point);
        for r in rows {
            log(&format!(
                "{}{:<6} mean latency {:>10.3} s{}",
                value.map(|v| format!("[{} = {v}] ", axis.as_deref().unwrap_or(""))).unwrap_or_default(),
                r.agent,
                r.mean_latency_s,
                r.optimality_gap.map(|g| format!(", gap {:.1}%", 100.0 * g)).unwrap_or_default()
            ));
            artifacts.comparison.push(ComparisonRecord {
                sweep_axis: axis.clone(),
                sweep_value: value,
                agent: r.agent,
                episodes: r.episodes,
                mean_latency_s: r.mean_latency_s,
                std_latency_s: r.std_latency_s,
                migration_s: r.migration_s,
                computation_s: r.computation_s,
                access_s: r.access_s,
                backhaul_s: r.backhaul_s,
                optimality_gap: r.optimality_gap,
            });
        }
    }
    write_csv(&out.join(METRICS_CSV), &METRICS_HEADER, &artifacts.metrics)?;
    write_csv(&out.join(COMPARISON_CSV), &COMPARISON_HEADER, &artifacts.comparison)?;
    Ok(artifacts)
}

/// Training only: metrics CSV, checkpoints and config echo, no comparison.
pub fn train(cfg: &ExperimentConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    if !cfg.agents.iter().any(|a| matches!(a, AgentKind::Dracm | AgentKind::Dqlm)) {
        return Err(HarnessError::ConfigInvalid(
            "training needs DRACM or DQLM in the agent list".into(),
        ));
    }
    let traces = resolve_traces(cfg)?;
    prepare_out(cfg, out, traces.report.as_ref())?;
    let grid = cfg.grid_spec();
    let mut artifacts = RunArtifacts {
        out_dir: out.to_path_buf(),
        metrics: Vec::new(),
        comparison: Vec::new(),
        checkpoints: Vec::new(),
    };
    for point in cfg.sweep_points() {
        let env = match point {
            None => cfg.env.clone(),
            Some((axis, v)) => axis.apply(&cfg.env, v)?,
        };
        let (_, metrics, checkpoints) = train_point(cfg, &env, &grid, &traces.train, point, out, log)?;
        artifacts.metrics.extend(metrics);
        artifacts.checkpoints.extend(checkpoints);
    }
    write_csv(&out.join(METRICS_CSV), &METRICS_HEADER, &artifacts.metrics)?;
    Ok(artifacts)
}
