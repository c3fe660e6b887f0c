//! Migration policies behind one interface, and the episode driver.
//!
//! Every agent is driven the same way: [`Agent::init`] at the start of an
//! episode, then alternating [`Agent::act`] / [`Agent::observe`] for each slot,
//! then [`Agent::end_episode`]. Learning agents keep their recurrent state or
//! posterior internally, so `act` only receives the newest observation.

mod dqlm;
mod mabts;
mod optim;

pub use dqlm::{td_loss, DqlmAgent, DqlmConfig, DqlmReport, DqlmTrainer, QNetwork};
pub use mabts::{BanditPosterior, MabtsAgent, MabtsConfig};
pub use optim::{build_cost_tensor, optim_solve, CostTensor, OptimAgent};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{CostBreakdown, Env, EnvConfig, EnvError, Observation, OracleSnapshot};
use crate::tensorcore::TensorError;
use crate::topology::{GridSpec, ServerId};
use crate::traces::SlotTrace;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent used before init")]
    NotInitialized,
    #[error("arm {arm} out of range for {arms} arms")]
    UnknownArm { arm: usize, arms: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("agent needs the episode's oracle snapshot")]
    MissingSnapshot,
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Agent-specific detail attached to a decision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum Diagnostics {
    #[default]
    None,
    /// Thompson draws, one per arm.
    Samples(Vec<f64>),
    QValues { q: Vec<f64>, epsilon: f64 },
    Policy { probs: Vec<f64>, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub action: ServerId,
    pub diagnostics: Diagnostics,
}

impl AgentDecision {
    pub fn plain(action: ServerId) -> Self {
        Self {
            action,
            diagnostics: Diagnostics::None,
        }
    }
}

/// What an agent may look at when an episode starts.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub first_obs: Observation,
    pub grid: &'a GridSpec,
    pub env_cfg: &'a EnvConfig,
    /// Full exogenous data; only the offline optimum may use it.
    pub snapshot: Option<&'a OracleSnapshot>,
    pub seed: u64,
}

pub trait Agent {
    fn name(&self) -> &str;
    fn init(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), AgentError>;
    fn act(&mut self, obs: &Observation, t: usize) -> Result<AgentDecision, AgentError>;
    fn observe(&mut self, _reward: f64, _breakdown: &CostBreakdown) -> Result<(), AgentError> {
        Ok(())
    }
    fn end_episode(&mut self) {}
}

/// The agent roster, as named in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgentKind {
    Nm,
    Am,
    Mabts,
    Dqlm,
    Optim,
    Dracm,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Nm,
        AgentKind::Am,
        AgentKind::Mabts,
        AgentKind::Dqlm,
        AgentKind::Optim,
        AgentKind::Dracm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Nm => "NM",
            AgentKind::Am => "AM",
            AgentKind::Mabts => "MABTS",
            AgentKind::Dqlm => "DQLM",
            AgentKind::Optim => "OPTIM",
            AgentKind::Dracm => "DRACM",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown agent {s:?}"))
    }
}

/// Stays on the initial serving node for the whole episode.
#[derive(Debug, Clone, Default)]
pub struct NeverMigrate {
    home: Option<ServerId>,
}

impl NeverMigrate {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Agent for NeverMigrate {
    fn name(&self) -> &str {
        "NM"
    }

    fn init(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), AgentError> {
        self.home = Some(ctx.first_obs.u);
        Ok(())
    }

    fn act(&mut self, _obs: &Observation, _t: usize) -> Result<AgentDecision, AgentError> {
        self.home.map(AgentDecision::plain).ok_or(AgentError::NotInitialized)
    }

    fn end_episode(&mut self) {
        self.home = None;
    }
}

/// Follows the user: the service always runs on the local server.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysMigrate;

impl Agent for AlwaysMigrate {
    fn name(&self) -> &str {
        "AM"
    }

    fn init(&mut self, _ctx: &EpisodeContext<'_>) -> Result<(), AgentError> {
        Ok(())
    }

    fn act(&mut self, obs: &Observation, _t: usize) -> Result<AgentDecision, AgentError> {
        Ok(AgentDecision::plain(obs.u))
    }
}

/// Result of one agent playing one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Total raw latency in seconds.
    pub total: f64,
    pub breakdown: CostBreakdown,
    pub actions: Vec<ServerId>,
    pub rewards: Vec<f64>,
    pub per_slot: Vec<f64>,
    /// Digest of the episode's exogenous data.
    pub digest: String,
}

/// Plays `agent` through the episode `(trace, seed)` on `env`.
pub fn run_episode(env: &mut Env, agent: &mut dyn Agent, trace: &SlotTrace, seed: u64) -> Result<EpisodeResult, AgentError> {
    let mut obs = env.reset(trace, seed)?;
    let snapshot = env.snapshot().expect("reset succeeded").clone();
    let ctx = EpisodeContext {
        first_obs: obs,
        grid: env.grid(),
        env_cfg: env.config(),
        snapshot: Some(&snapshot),
        seed,
    };
    agent.init(&ctx)?;
    let mut result = EpisodeResult {
        total: 0.0,
        breakdown: CostBreakdown::default(),
        actions: Vec::with_capacity(snapshot.horizon()),
        rewards: Vec::with_capacity(snapshot.horizon()),
        per_slot: Vec::with_capacity(snapshot.horizon()),
        digest: snapshot.digest(),
    };
    let mut t = 0;
    while !env.is_done() {
        let decision = agent.act(&obs, t)?;
        let out = env.step(decision.action)?;
        agent.observe(out.reward, &out.breakdown)?;
        result.total += out.breakdown.total();
        result.breakdown.accumulate(&out.breakdown);
        result.actions.push(decision.action);
        result.rewards.push(out.reward);
        result.per_slot.push(out.breakdown.total());
        obs = out.obs;
        t += 1;
    }
    agent.end_episode();
    Ok(result)
}

/// Total latency of a fixed action sequence on a snapshot, summed slot by
/// slot exactly as the environment does.
pub fn sequence_cost(
    snapshot: &OracleSnapshot,
    actions: &[ServerId],
    grid: &GridSpec,
    cfg: &EnvConfig,
) -> Result<f64, AgentError> {
    let mut prev = snapshot.user_cell[0];
    let mut total = 0.0;
    for (t, &a) in actions.iter().enumerate() {
        let (c, _) = crate::env::slot_cost(prev, a, &snapshot.slot_inputs(t, a), grid, cfg)?;
        total += c;
        prev = a;
    }
    Ok(total)
}
