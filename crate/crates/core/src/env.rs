//! The service-migration environment.
//!
//! Each slot the user sits in some cell `u_t` and offloads a batch of tasks to
//! the server currently hosting its service. The agent picks the serving node
//! `a_t` and pays migration, computation, access and backhaul delay.
//!
//! All exogenous randomness of an episode (user tasks, background loads,
//! migration coefficient) is drawn up front from counter-based streams keyed by
//! `(seed, purpose, slot, server)`, so it never depends on the actions taken.
//! [`oracle_snapshot`] exposes the same draws to the offline optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{hop_distance, locate_with_offset, upload_rate, GridSpec, RatePoint, ServerId, TopologyError};
use crate::traces::SlotTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("negative hop count {0}")]
    NegativeHops(i64),
    #[error("server capacity must be positive")]
    ZeroCapacity,
    #[error("upload rate must be positive")]
    ZeroRate,
    #[error("backhaul bandwidth must be positive")]
    ZeroBandwidth,
    #[error("trace has {len} slots, episode needs {needed}")]
    TraceTooShort { len: usize, needed: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("environment has not been reset")]
    NotReset,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// When the per-server background task rate is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateRedraw {
    /// Once per world, from `world_seed`: every episode sees the same
    /// characteristic load level per server.
    #[default]
    PerWorld,
    /// Once per episode, from the episode seed.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub f_hz: f64,
    pub eta_bps: f64,
    pub lambda_bh_s_per_hop: f64,
    pub mc_range_s_per_hop: [f64; 2],
    pub data_range_bits: [f64; 2],
    pub kappa_range_cycles_per_bit: [f64; 2],
    pub user_rate_tasks_per_slot: f64,
    pub server_rate_range_tasks_per_slot: [f64; 2],
    pub horizon_slots: usize,
    pub reward_scale: f64,
    pub server_rate_redraw: RateRedraw,
    pub world_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            f_hz: 1.28e11,
            eta_bps: 5e8,
            lambda_bh_s_per_hop: 0.02,
            mc_range_s_per_hop: [1.0, 3.0],
            data_range_bits: [4e5, 4e7],
            kappa_range_cycles_per_bit: [200.0, 10_000.0],
            user_rate_tasks_per_slot: 2.0,
            server_rate_range_tasks_per_slot: [5.0, 20.0],
            horizon_slots: 100,
            reward_scale: 10.0,
            server_rate_redraw: RateRedraw::PerWorld,
            world_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !(self.f_hz > 0.0) {
            return bad("f_hz must be positive");
        }
        if !(self.eta_bps > 0.0) {
            return bad("eta_bps must be positive");
        }
        if !(self.lambda_bh_s_per_hop >= 0.0) {
            return bad("lambda_bh_s_per_hop must be nonnegative");
        }
        if !(self.user_rate_tasks_per_slot >= 0.0) {
            return bad("user_rate_tasks_per_slot must be nonnegative");
        }
        if !(self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        if self.horizon_slots == 0 {
            return bad("horizon_slots must be at least 1");
        }
        for (name, [lo, hi]) in [
            ("mc_range_s_per_hop", self.mc_range_s_per_hop),
            ("data_range_bits", self.data_range_bits),
            ("kappa_range_cycles_per_bit", self.kappa_range_cycles_per_bit),
            ("server_rate_range_tasks_per_slot", self.server_rate_range_tasks_per_slot),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(EnvError::InvalidConfig(format!("{name} must satisfy 0 <= low <= high")));
            }
        }
        if self.mc_range_s_per_hop[0] <= 0.0 {
            return bad("mc_range_s_per_hop must be positive");
        }
        Ok(())
    }
}

/// One offloaded task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub data: f64,
    pub kappa: f64,
    pub cycles: f64,
}

impl Task {
    pub fn new(data: f64, kappa: f64) -> Self {
        Self {
            data,
            kappa,
            cycles: data * kappa,
        }
    }
}

/// What the user can see at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: ServerId,
    pub rho: f64,
    pub c: f64,
    pub data: f64,
}

/// Per-slot delay components in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub migration: f64,
    pub computation: f64,
    pub access: f64,
    pub backhaul: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.migration + self.computation + self.access + self.backhaul
    }

    pub fn accumulate(&mut self, other: &CostBreakdown) {
        self.migration += other.migration;
        self.computation += other.computation;
        self.access += other.access;
        self.backhaul += other.backhaul;
    }

    pub fn scaled(&self, k: f64) -> CostBreakdown {
        CostBreakdown {
            migration: self.migration * k,
            computation: self.computation * k,
            access: self.access * k,
            backhaul: self.backhaul * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Observation for the next slot. On the final step this repeats the
    /// last slot's observation since no further slot exists.
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub breakdown: CostBreakdown,
}

/// Latent state of the current slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub slot: usize,
    pub user_cell: ServerId,
    pub user_rate_point: RatePoint,
    pub serving: ServerId,
    pub server_loads: Vec<f64>,
    pub mc: f64,
    pub user_tasks: Vec<Task>,
}

pub fn migration_delay(hops: i64, mc: f64) -> Result<f64, EnvError> {
    if hops < 0 {
        return Err(EnvError::NegativeHops(hops));
    }
    Ok(mc * hops as f64)
}

/// Delay of the user's `c` cycles on a server already holding `w` cycles,
/// with capacity shared in proportion to demand.
pub fn computation_delay(c: f64, w: f64, f: f64) -> Result<f64, EnvError> {
    if f <= 0.0 {
        return Err(EnvError::ZeroCapacity);
    }
    Ok((w + c) / f)
}

pub fn access_delay(data: f64, rho: f64) -> Result<f64, EnvError> {
    if rho <= 0.0 {
        return Err(EnvError::ZeroRate);
    }
    Ok(data / rho)
}

pub fn backhaul_delay(hops: usize, data: f64, eta: f64, lambda_bh: f64) -> Result<f64, EnvError> {
    if eta <= 0.0 {
        return Err(EnvError::ZeroBandwidth);
    }
    if hops == 0 {
        return Ok(0.0);
    }
    Ok(data / eta + 2.0 * lambda_bh * hops as f64)
}

/// Exogenous quantities that enter one slot's cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotInputs {
    pub u: ServerId,
    pub rho: f64,
    pub c: f64,
    pub data: f64,
    /// Background load of the chosen serving node, in cycles.
    pub w_action: f64,
    pub mc: f64,
}

pub fn slot_cost(
    prev: ServerId,
    action: ServerId,
    inputs: &SlotInputs,
    grid: &GridSpec,
    cfg: &EnvConfig,
) -> Result<(f64, CostBreakdown), EnvError> {
    let d = hop_distance(prev, action, grid)?;
    let y = hop_distance(action, inputs.u, grid)?;
    let breakdown = CostBreakdown {
        migration: migration_delay(d as i64, inputs.mc)?,
        computation: computation_delay(inputs.c, inputs.w_action, cfg.f_hz)?,
        access: access_delay(inputs.data, inputs.rho)?,
        backhaul: backhaul_delay(y, inputs.data, cfg.eta_bps, cfg.lambda_bh_s_per_hop)?,
    };
    Ok((breakdown.total(), breakdown))
}

const PURPOSE_SERVER_RATE: u64 = 1;
const PURPOSE_USER_TASKS: u64 = 2;
const PURPOSE_SERVER_LOAD: u64 = 3;
const PURPOSE_MIGRATION_COEF: u64 = 4;

/// Independent random stream for one `(purpose, slot, server)` key.
pub fn keyed_stream(seed: u64, purpose: u64, slot: u64, server: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) | ((slot & 0xff_ffff) << 32) | (server & 0xffff_ffff));
    rng
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn poisson_count<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("positive finite rate");
    dist.sample(rng) as usize
}

fn sample_tasks<R: Rng + ?Sized>(rng: &mut R, rate: f64, cfg: &EnvConfig) -> Vec<Task> {
    let n = poisson_count(rng, rate);
    (0..n)
        .map(|_| {
            let data = uniform(rng, cfg.data_range_bits);
            let kappa = uniform(rng, cfg.kappa_range_cycles_per_bit);
            Task::new(data, kappa)
        })
        .collect()
}

/// Tasks the user offloads in one slot.
pub fn sample_user_tasks<R: Rng + ?Sized>(rng: &mut R, cfg: &EnvConfig) -> Vec<Task> {
    sample_tasks(rng, cfg.user_rate_tasks_per_slot, cfg)
}

/// `(c_t, data_t)` aggregates of a task list.
pub fn task_totals(tasks: &[Task]) -> (f64, f64) {
    tasks
        .iter()
        .fold((0.0, 0.0), |(c, d), t| (c + t.cycles, d + t.data))
}

/// Characteristic background task rate of each server.
pub fn sample_server_rates<R: Rng + ?Sized>(rng: &mut R, cfg: &EnvConfig, servers: usize) -> Vec<f64> {
    (0..servers)
        .map(|_| uniform(rng, cfg.server_rate_range_tasks_per_slot))
        .collect()
}

/// Background load (cycles) of one server in one slot, given its task rate.
pub fn sample_server_load<R: Rng + ?Sized>(rng: &mut R, rate: f64, cfg: &EnvConfig) -> f64 {
    sample_tasks(rng, rate, cfg).iter().map(|t| t.cycles).sum()
}

/// Per-server loads for one slot: rates drawn from `rng`, then one Poisson
/// batch per server.
pub fn sample_server_loads<R: Rng + ?Sized>(rng: &mut R, cfg: &EnvConfig, servers: usize) -> Vec<f64> {
    let rates = sample_server_rates(rng, cfg, servers);
    rates.iter().map(|&r| sample_server_load(rng, r, cfg)).collect()
}

/// Full-information view of an episode's exogenous data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSnapshot {
    pub user_cell: Vec<ServerId>,
    pub rho: Vec<f64>,
    pub c: Vec<f64>,
    pub data: Vec<f64>,
    /// `server_loads[t][server]`, cycles.
    pub server_loads: Vec<Vec<f64>>,
    pub mc: Vec<f64>,
}

impl OracleSnapshot {
    pub fn horizon(&self) -> usize {
        self.user_cell.len()
    }

    pub fn slot_inputs(&self, t: usize, action: ServerId) -> SlotInputs {
        SlotInputs {
            u: self.user_cell[t],
            rho: self.rho[t],
            c: self.c[t],
            data: self.data[t],
            w_action: self.server_loads[t][action.index()],
            mc: self.mc[t],
        }
    }

    pub fn observation(&self, t: usize) -> Observation {
        Observation {
            u: self.user_cell[t],
            rho: self.rho[t],
            c: self.c[t],
            data: self.data[t],
        }
    }

    /// SHA-256 over every value, used to prove that agents saw the same episode.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in 0..self.horizon() {
            h.update((self.user_cell[t].index() as u64).to_le_bytes());
            for v in [self.rho[t], self.c[t], self.data[t], self.mc[t]] {
                h.update(v.to_bits().to_le_bytes());
            }
            for w in &self.server_loads[t] {
                h.update(w.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything random about one episode, pre-committed at reset.
#[derive(Debug, Clone)]
struct Episode {
    rate_points: Vec<RatePoint>,
    user_tasks: Vec<Vec<Task>>,
    snapshot: OracleSnapshot,
}

fn build_episode(trace: &SlotTrace, seed: u64, grid: &GridSpec, cfg: &EnvConfig) -> Result<Episode, EnvError> {
    cfg.validate()?;
    let horizon = cfg.horizon_slots;
    if trace.slots.len() < horizon {
        return Err(EnvError::TraceTooShort {
            len: trace.slots.len(),
            needed: horizon,
        });
    }
    let servers = grid.num_servers();
    let rate_seed = match cfg.server_rate_redraw {
        RateRedraw::PerWorld => cfg.world_seed,
        RateRedraw::PerEpisode => seed,
    };
    let rates: Vec<f64> = (0..servers)
        .map(|s| {
            let mut rng = keyed_stream(rate_seed, PURPOSE_SERVER_RATE, 0, s as u64);
            uniform(&mut rng, cfg.server_rate_range_tasks_per_slot)
        })
        .collect();

    let mut snap = OracleSnapshot {
        user_cell: Vec::with_capacity(horizon),
        rho: Vec::with_capacity(horizon),
        c: Vec::with_capacity(horizon),
        data: Vec::with_capacity(horizon),
        server_loads: Vec::with_capacity(horizon),
        mc: Vec::with_capacity(horizon),
    };
    let mut rate_points = Vec::with_capacity(horizon);
    let mut user_tasks = Vec::with_capacity(horizon);
    for (t, &(lat, lon)) in trace.slots.iter().take(horizon).enumerate() {
        let (cell, point) = locate_with_offset(lat, lon, grid)?;
        let slot = t as u64;
        let tasks = sample_user_tasks(&mut keyed_stream(seed, PURPOSE_USER_TASKS, slot, 0), cfg);
        let (c, data) = task_totals(&tasks);
        let loads = rates
            .iter()
            .enumerate()
            .map(|(s, &r)| {
                let mut rng = keyed_stream(seed, PURPOSE_SERVER_LOAD, slot, s as u64);
                sample_server_load(&mut rng, r, cfg)
            })
            .collect();
        let mc = uniform(
            &mut keyed_stream(seed, PURPOSE_MIGRATION_COEF, slot, 0),
            cfg.mc_range_s_per_hop,
        );
        snap.user_cell.push(cell);
        snap.rho.push(upload_rate(point));
        snap.c.push(c);
        snap.data.push(data);
        snap.server_loads.push(loads);
        snap.mc.push(mc);
        rate_points.push(point);
        user_tasks.push(tasks);
    }
    Ok(Episode {
        rate_points,
        user_tasks,
        snapshot: snap,
    })
}

/// Pre-samples the whole episode that `Env::reset(trace, seed)` would play.
pub fn oracle_snapshot(
    trace: &SlotTrace,
    seed: u64,
    grid: &GridSpec,
    cfg: &EnvConfig,
) -> Result<OracleSnapshot, EnvError> {
    Ok(build_episode(trace, seed, grid, cfg)?.snapshot)
}

/// Single-user migration environment. One instance drives one episode at a time.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    grid: GridSpec,
    episode: Option<Episode>,
    slot: usize,
    serving: ServerId,
}

impl Env {
    pub fn new(cfg: EnvConfig, grid: GridSpec) -> Result<Self, EnvError> {
        cfg.validate()?;
        grid.validate()?;
        Ok(Self {
            cfg,
            grid,
            episode: None,
            slot: 0,
            serving: ServerId(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn num_servers(&self) -> usize {
        self.grid.num_servers()
    }

    pub fn reset(&mut self, trace: &SlotTrace, seed: u64) -> Result<Observation, EnvError> {
        let episode = build_episode(trace, seed, &self.grid, &self.cfg)?;
        self.serving = episode.snapshot.user_cell[0];
        self.slot = 0;
        let obs = episode.snapshot.observation(0);
        self.episode = Some(episode);
        Ok(obs)
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn serving(&self) -> ServerId {
        self.serving
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.cfg.horizon_slots
    }

    pub fn snapshot(&self) -> Option<&OracleSnapshot> {
        self.episode.as_ref().map(|e| &e.snapshot)
    }

    pub fn state(&self) -> Option<EnvState> {
        let ep = self.episode.as_ref()?;
        let t = self.slot.min(self.cfg.horizon_slots - 1);
        Some(EnvState {
            slot: self.slot,
            user_cell: ep.snapshot.user_cell[t],
            user_rate_point: ep.rate_points[t],
            serving: self.serving,
            server_loads: ep.snapshot.server_loads[t].clone(),
            mc: ep.snapshot.mc[t],
            user_tasks: ep.user_tasks[t].clone(),
        })
    }

    pub fn step(&mut self, action: ServerId) -> Result<StepOutcome, EnvError> {
        let ep = self.episode.as_ref().ok_or(EnvError::NotReset)?;
        if self.slot >= self.cfg.horizon_slots {
            return Err(EnvError::EpisodeFinished);
        }
        self.grid.server(action.index())?;
        let t = self.slot;
        let inputs = ep.snapshot.slot_inputs(t, action);
        let (total, breakdown) = slot_cost(self.serving, action, &inputs, &self.grid, &self.cfg)?;
        self.serving = action;
        self.slot += 1;
        let done = self.slot == self.cfg.horizon_slots;
        let obs = ep.snapshot.observation(if done { t } else { self.slot });
        Ok(StepOutcome {
            obs,
            reward: -total / self.cfg.reward_scale,
            done,
            breakdown,
        })
    }
}
