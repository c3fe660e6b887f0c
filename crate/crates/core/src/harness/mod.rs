//! Experiment orchestration: configs, trace resolution, training, shared-episode
//! agent comparisons, sweeps over one environment axis, CSV artifacts, and the
//! self-check suites.

pub mod checks;
mod compare;
mod config;
mod export;
mod run;

pub use compare::{compare_agents, ComparisonRow};
pub use config::{ExperimentConfig, GridChoice, Sweep, SweepAxis, TraceFormat, TraceSource};
pub use export::{export_plot_data, PlotRow, DEFAULT_PLOT_METRICS};
pub use run::{
    derive_seed, eval_seeds, ingest_file, resolve_traces, run, run_with, train, ComparisonRecord, MetricsRecord,
    ResolvedTraces, RunArtifacts, CHECKPOINT_DIR, COMPARISON_CSV, CONFIG_JSON, INGEST_REPORT_JSON, METRICS_CSV,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::agents::AgentError;
use crate::dracm::DracmError;
use crate::env::EnvError;
use crate::tensorcore::TensorError;
use crate::traces::TraceError;

/// Process exit codes of the command-line driver.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("trace source {0} does not exist")]
    TraceSourceMissing(PathBuf),
    #[error("no test episodes to evaluate")]
    EmptyTestSet,
    #[error("no metrics to export: {0}")]
    MissingMetrics(String),
    #[error("agents saw different exogenous data on trace {trace}, seed {seed}")]
    UnsharedEpisode { trace: String, seed: u64 },
    #[error("{} check(s) failed: {}", .0.len(), .0.join(", "))]
    CheckFailed(Vec<String>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dracm(#[from] DracmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    /// `1` for configuration problems, `3` for failed self-checks, `2` for
    /// everything data- or runtime-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigInvalid(_)
            | Self::Env(EnvError::InvalidConfig(_))
            | Self::Agent(AgentError::InvalidConfig(_))
            | Self::Dracm(DracmError::InvalidConfig(_)) => EXIT_CONFIG,
            Self::CheckFailed(_) => EXIT_CHECK,
            _ => EXIT_DATA,
        }
    }
}
