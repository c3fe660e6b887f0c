//! Sampling, advantage estimation, clipped updates, and greedy evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{dracm_loss_backward, LossConfig, LossReport};
use super::network::{ModelDims, RecurrentState, StepInput};
use super::{compute_gae, DracmError, DracmModel, Trajectory};
use crate::agents::{Agent, AgentDecision, AgentError, Diagnostics, EpisodeContext};
use crate::env::{keyed_stream, CostBreakdown, Env, EnvConfig, Observation};
use crate::tensorcore::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::topology::{GridSpec, ServerId};
use crate::traces::SlotTrace;

const STREAM_EPISODES: u64 = 0x10;
const STREAM_ACTIONS: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x12;
const STREAM_WORKLOADS: u64 = 0x13;
const STREAM_PASSES: u64 = 0x14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub episodes_per_iter: usize,
    pub epochs: usize,
    pub minibatch_trajectories: usize,
    pub iterations: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    /// Standardize advantages over each iteration's samples.
    pub normalize_advantages: bool,
    /// Pair every training trace with one fixed workload seed for the whole
    /// run (common random numbers across iterations) instead of drawing a
    /// fresh seed per episode.
    pub fixed_workloads: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            lr: 5e-4,
            episodes_per_iter: 16,
            epochs: 8,
            minibatch_trajectories: 4,
            iterations: 100,
            seed: 0,
            embed_dim: 2,
            lstm_hidden: 256,
            head_hidden: 128,
            normalize_advantages: true,
            fixed_workloads: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), DracmError> {
        let bad = |m: &str| Err(DracmError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be nonnegative");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be nonnegative");
        }
        if self.episodes_per_iter == 0 || self.minibatch_trajectories == 0 {
            return bad("episodes_per_iter and minibatch_trajectories must be positive");
        }
        if self.embed_dim == 0 || self.lstm_hidden == 0 || self.head_hidden == 0 {
            return bad("layer sizes must be positive");
        }
        Ok(())
    }

    pub fn dims(&self, servers: usize) -> ModelDims {
        ModelDims {
            servers,
            embed_dim: self.embed_dim,
            lstm_hidden: self.lstm_hidden,
            head_hidden: self.head_hidden,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            clip_eps: self.clip_eps,
            entropy_coef: self.entropy_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Mean total raw latency of the sampled episodes, seconds.
    pub mean_latency_s: f64,
    /// Mean undiscounted scaled return of the sampled episodes.
    pub mean_return: f64,
    /// Mean of `−L_act` over the update minibatches.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_latency_s: f64,
    pub std_latency_s: f64,
    pub mean_breakdown: CostBreakdown,
    pub per_episode: Vec<f64>,
}

impl EvalReport {
    pub fn from_totals(per_episode: Vec<f64>, breakdowns: &[CostBreakdown]) -> Result<Self, DracmError> {
        if per_episode.is_empty() {
            return Err(DracmError::EmptyTestSet);
        }
        let n = per_episode.len() as f64;
        let mean = per_episode.iter().sum::<f64>() / n;
        let var = per_episode.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut sum = CostBreakdown::default();
        for b in breakdowns {
            sum.accumulate(b);
        }
        Ok(Self {
            episodes: per_episode.len(),
            mean_latency_s: mean,
            std_latency_s: var.sqrt(),
            mean_breakdown: sum.scaled(1.0 / n),
            per_episode,
        })
    }
}

enum ActionMode<'a> {
    Sample(&'a mut [ChaCha8Rng]),
    Greedy,
}

/// Plays all `episodes` in lockstep with one batched encoder step per slot.
fn rollout(
    model: &DracmModel,
    store: &ParamStore,
    env_cfg: &EnvConfig,
    grid: &GridSpec,
    episodes: &[(&SlotTrace, u64)],
    mut mode: ActionMode<'_>,
) -> Result<Vec<Trajectory>, DracmError> {
    let n = episodes.len();
    let horizon = env_cfg.horizon_slots;
    let mut envs = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    let mut trajs = Vec::with_capacity(n);
    for &(trace, seed) in episodes {
        let mut env = Env::new(env_cfg.clone(), grid.clone())?;
        obs.push(env.reset(trace, seed)?);
        envs.push(env);
        trajs.push(Trajectory {
            trace_id: trace.id.clone(),
            env_seed: seed,
            inputs: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            behavior_log_probs: Vec::with_capacity(horizon),
            behavior_values: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            breakdowns: Vec::with_capacity(horizon),
            episode_return: 0.0,
            total_latency: 0.0,
        });
    }
    let mut prev: Vec<usize> = obs.iter().map(|o| o.u.index()).collect();
    let mut state = model.encoder.initial_state(n);
    for _ in 0..horizon {
        let inputs: Vec<StepInput> = obs.iter().zip(&prev).map(|(o, &p)| StepInput::new(o, p)).collect();
        let h = model.encoder.step(store, &mut state, &inputs)?;
        let (dists, values) = model.heads(store, &h)?;
        for b in 0..n {
            let action = match &mut mode {
                ActionMode::Sample(rngs) => dists[b].sample(&mut rngs[b]),
                ActionMode::Greedy => dists[b].argmax(),
            };
            let out = envs[b].step(ServerId(action))?;
            let tr = &mut trajs[b];
            tr.inputs.push(inputs[b]);
            tr.actions.push(action);
            tr.behavior_log_probs.push(dists[b].log_probs[action]);
            tr.behavior_values.push(values[b]);
            tr.rewards.push(out.reward);
            tr.breakdowns.push(out.breakdown);
            tr.episode_return += out.reward;
            tr.total_latency += out.breakdown.total();
            obs[b] = out.obs;
            prev[b] = action;
        }
    }
    Ok(trajs)
}

/// Greedy rollouts of the policy on every `(trace, seed)` pair.
pub fn evaluate(
    model: &DracmModel,
    store: &ParamStore,
    env_cfg: &EnvConfig,
    grid: &GridSpec,
    traces: &[SlotTrace],
    seeds: &[u64],
) -> Result<EvalReport, DracmError> {
    let pairs: Vec<(&SlotTrace, u64)> = traces.iter().flat_map(|t| seeds.iter().map(move |&s| (t, s))).collect();
    if pairs.is_empty() {
        return Err(DracmError::EmptyTestSet);
    }
    let mut totals = Vec::with_capacity(pairs.len());
    let mut breakdowns = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(64) {
        for tr in rollout(model, store, env_cfg, grid, chunk, ActionMode::Greedy)? {
            let mut b = CostBreakdown::default();
            for x in &tr.breakdowns {
                b.accumulate(x);
            }
            totals.push(tr.total_latency);
            breakdowns.push(b);
        }
    }
    EvalReport::from_totals(totals, &breakdowns)
}

/// Owns the parameters and optimizer state of one training run.
#[derive(Debug, Clone)]
pub struct DracmTrainer {
    config: TrainerConfig,
    env_cfg: EnvConfig,
    grid: GridSpec,
    traces: Vec<SlotTrace>,
    model: DracmModel,
    store: ParamStore,
    adam: AdamState,
    iteration: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct UpdateStats {
    actor_loss: f64,
    critic_loss: f64,
    entropy: f64,
}

impl DracmTrainer {
    pub fn new(config: TrainerConfig, env_cfg: EnvConfig, grid: GridSpec, traces: Vec<SlotTrace>) -> Result<Self, DracmError> {
        config.validate()?;
        env_cfg.validate()?;
        if traces.is_empty() {
            return Err(DracmError::EmptyBatch);
        }
        for tr in &traces {
            if tr.len() < env_cfg.horizon_slots {
                return Err(crate::env::EnvError::TraceTooShort {
                    len: tr.len(),
                    needed: env_cfg.horizon_slots,
                }
                .into());
            }
        }
        let (model, store) = DracmModel::init(config.dims(grid.num_servers()), config.seed)?;
        let adam = AdamState::new(
            &store,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            config,
            env_cfg,
            grid,
            traces,
            model,
            store,
            adam,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn model(&self) -> &DracmModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_cfg
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Training traces are visited in passes, each pass a fresh permutation,
    /// so every trace is used equally often. Returns the trace index of the
    /// `position`-th episode of the run.
    fn trace_at(&self, position: usize) -> usize {
        let n = self.traces.len();
        let (pass, offset) = (position / n, position % n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut keyed_stream(self.config.seed, STREAM_PASSES, pass as u64, 0));
        order[offset]
    }

    /// Rolls out this iteration's episodes with the current (behavior) policy.
    pub fn sample(&self) -> Result<Vec<Trajectory>, DracmError> {
        let it = self.iteration as u64;
        let n_ep = self.config.episodes_per_iter;
        let mut fresh = keyed_stream(self.config.seed, STREAM_EPISODES, it, 0);
        let episodes: Vec<(&SlotTrace, u64)> = (0..n_ep)
            .map(|e| {
                let k = self.trace_at(self.iteration * n_ep + e);
                let workload = fresh.random::<u64>();
                let seed = if self.config.fixed_workloads {
                    keyed_stream(self.config.seed, STREAM_WORKLOADS, 0, k as u64).random::<u64>()
                } else {
                    workload
                };
                (&self.traces[k], seed)
            })
            .collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..episodes.len())
            .map(|e| keyed_stream(self.config.seed, STREAM_ACTIONS, it, e as u64))
            .collect();
        rollout(
            &self.model,
            &self.store,
            &self.env_cfg,
            &self.grid,
            &episodes,
            ActionMode::Sample(&mut rngs),
        )
    }

    /// Advantages from the critic estimates recorded while sampling, optionally
    /// standardized over the whole set. Computed once per iteration.
    pub fn advantages(&self, trajs: &[Trajectory]) -> Result<Vec<Vec<f64>>, DracmError> {
        let mut advs = Vec::with_capacity(trajs.len());
        for tr in trajs {
            let mut values = tr.behavior_values.clone();
            values.push(0.0);
            advs.push(compute_gae(&tr.rewards, &values, self.config.gamma, self.config.lambda)?.0);
        }
        if self.config.normalize_advantages {
            let count = advs.iter().map(Vec::len).sum::<usize>() as f64;
            if count > 0.0 {
                let mean = advs.iter().flatten().sum::<f64>() / count;
                let var = advs.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / count;
                let scale = 1.0 / (var.sqrt() + 1e-8);
                for a in advs.iter_mut().flatten() {
                    *a = (*a - mean) * scale;
                }
            }
        }
        Ok(advs)
    }

    /// `epochs` passes of shuffled whole-trajectory minibatch updates.
    fn update(&mut self, trajs: &[Trajectory], advs: &[Vec<f64>]) -> Result<UpdateStats, DracmError> {
        let loss_cfg = self.config.loss_config();
        let mut stats = UpdateStats::default();
        let mut updates = 0usize;
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        for epoch in 0..self.config.epochs {
            let mut rng = keyed_stream(self.config.seed, STREAM_SHUFFLE, self.iteration as u64, epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.config.minibatch_trajectories) {
                let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &trajs[i]).collect();
                let adv: Vec<&[f64]> = chunk.iter().map(|&i| advs[i].as_slice()).collect();
                self.store.zero_grads();
                let rep: LossReport = dracm_loss_backward(&self.model, &mut self.store, &batch, &adv, &loss_cfg)?;
                if self.store.grads_finite() {
                    self.adam.update(&mut self.store);
                } else {
                    self.store.zero_grads();
                }
                stats.actor_loss += -rep.actor_objective;
                stats.critic_loss += rep.critic_loss;
                stats.entropy += rep.entropy;
                updates += 1;
            }
        }
        if updates > 0 {
            let k = 1.0 / updates as f64;
            stats.actor_loss *= k;
            stats.critic_loss *= k;
            stats.entropy *= k;
        }
        Ok(stats)
    }

    /// One full iteration: sample, estimate advantages, update.
    pub fn train_iteration(&mut self) -> Result<IterationReport, DracmError> {
        let start = Instant::now();
        let trajs = self.sample()?;
        let advs = self.advantages(&trajs)?;
        let stats = self.update(&trajs, &advs)?;
        let n = trajs.len() as f64;
        let report = IterationReport {
            iteration: self.iteration,
            mean_latency_s: trajs.iter().map(|t| t.total_latency).sum::<f64>() / n,
            mean_return: trajs.iter().map(|t| t.episode_return).sum::<f64>() / n,
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            entropy: stats.entropy,
            wall_s: start.elapsed().as_secs_f64(),
        };
        self.iteration += 1;
        Ok(report)
    }

    /// Runs the configured number of iterations, passing each report to `on_report`.
    pub fn train(&mut self, mut on_report: impl FnMut(&IterationReport)) -> Result<Vec<IterationReport>, DracmError> {
        let mut reports = Vec::with_capacity(self.config.iterations);
        for _ in 0..self.config.iterations {
            let r = self.train_iteration()?;
            on_report(&r);
            reports.push(r);
        }
        Ok(reports)
    }

    pub fn evaluate(&self, traces: &[SlotTrace], seeds: &[u64]) -> Result<EvalReport, DracmError> {
        evaluate(&self.model, &self.store, &self.env_cfg, &self.grid, traces, seeds)
    }

    pub fn agent(&self) -> DracmAgent {
        DracmAgent::new(self.model, self.store.clone())
    }
}

/// A trained (or fresh) policy playing through the common agent interface.
#[derive(Debug, Clone)]
pub struct DracmAgent {
    model: DracmModel,
    store: ParamStore,
    /// `None` plays greedily; otherwise actions are sampled from this seed.
    sample_seed: Option<u64>,
    rng: Option<ChaCha8Rng>,
    state: Option<RecurrentState>,
    prev: usize,
}

impl DracmAgent {
    pub fn new(model: DracmModel, store: ParamStore) -> Self {
        Self {
            model,
            store,
            sample_seed: None,
            rng: None,
            state: None,
            prev: 0,
        }
    }

    pub fn sampling(mut self, seed: u64) -> Self {
        self.sample_seed = Some(seed);
        self
    }
}

impl Agent for DracmAgent {
    fn name(&self) -> &str {
        "DRACM"
    }

    fn init(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), AgentError> {
        if ctx.grid.num_servers() != self.model.dims.servers {
            return Err(AgentError::InvalidConfig(format!(
                "policy trained for {} servers, grid has {}",
                self.model.dims.servers,
                ctx.grid.num_servers()
            )));
        }
        self.state = Some(self.model.encoder.initial_state(1));
        self.prev = ctx.first_obs.u.index();
        self.rng = self.sample_seed.map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            r.set_stream(ctx.seed);
            r
        });
        Ok(())
    }

    fn act(&mut self, obs: &Observation, _t: usize) -> Result<AgentDecision, AgentError> {
        let state = self.state.as_mut().ok_or(AgentError::NotInitialized)?;
        let h: Tensor = self.model.encoder.step(&self.store, state, &[StepInput::new(obs, self.prev)])?;
        let (dists, values) = self.model.heads(&self.store, &h)?;
        let action = match &mut self.rng {
            Some(rng) => dists[0].sample(rng),
            None => dists[0].argmax(),
        };
        self.prev = action;
        Ok(AgentDecision {
            action: ServerId(action),
            diagnostics: Diagnostics::Policy {
                probs: dists[0].probs.clone(),
                value: values[0],
            },
        })
    }

    fn end_episode(&mut self) {
        self.state = None;
        self.rng = None;
    }
}
