//! Recurrent deep Q-learning: the same encoder as the actor-critic agent with
//! a Q-value head, ε-greedy exploration, and a periodically synced target
//! network.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentDecision, AgentError, Diagnostics, EpisodeContext};
use crate::dracm::network::{Encoder, Head, ModelDims, RecurrentState, StepInput};
use crate::env::{keyed_stream, Env, EnvConfig, Observation};
use crate::tensorcore::{AdamConfig, AdamState, ParamStore, Tensor, TensorError};
use crate::topology::{GridSpec, ServerId};
use crate::traces::SlotTrace;

const STREAM_EPISODES: u64 = 0x20;
const STREAM_ACTIONS: u64 = 0x21;
const STREAM_SHUFFLE: u64 = 0x22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QNetwork {
    pub dims: ModelDims,
    pub encoder: Encoder,
    pub head: Head,
}

impl QNetwork {
    pub fn init(dims: ModelDims, seed: u64) -> Result<(Self, ParamStore), TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::register(&mut store, "enc", dims, &mut rng)?;
        let head = Head::register(&mut store, "q", dims.lstm_hidden, dims.head_hidden, dims.servers, &mut rng)?;
        Ok((Self { dims, encoder, head }, store))
    }

    pub fn lookup(store: &ParamStore, dims: ModelDims) -> Result<Self, TensorError> {
        Ok(Self {
            dims,
            encoder: Encoder::lookup(store, "enc", dims)?,
            head: Head::lookup(store, "q", dims.servers)?,
        })
    }
}

/// Mean squared TD error.
pub fn td_loss(q_sa: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(q_sa.len(), targets.len(), "one target per Q-value");
    if q_sa.is_empty() {
        return 0.0;
    }
    q_sa.iter().zip(targets).map(|(q, y)| (y - q).powi(2)).sum::<f64>() / q_sa.len() as f64
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = k;
        }
    }
    best
}

fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqlmConfig {
    pub gamma: f64,
    pub lr: f64,
    pub episodes_per_iter: usize,
    pub epochs: usize,
    pub minibatch_trajectories: usize,
    pub iterations: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Target network is overwritten with the online one every this many epochs.
    pub target_sync_epochs: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
}

impl Default for DqlmConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 5e-4,
            episodes_per_iter: 16,
            epochs: 8,
            minibatch_trajectories: 4,
            iterations: 100,
            eps_start: 1.0,
            eps_end: 0.05,
            target_sync_epochs: 2,
            seed: 0,
            embed_dim: 2,
            lstm_hidden: 256,
            head_hidden: 128,
        }
    }
}

impl DqlmConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.into()));
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be nonnegative");
        }
        if !((0.0..=1.0).contains(&self.eps_start) && (0.0..=1.0).contains(&self.eps_end)) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.episodes_per_iter == 0 || self.minibatch_trajectories == 0 || self.target_sync_epochs == 0 {
            return bad("episodes_per_iter, minibatch_trajectories and target_sync_epochs must be positive");
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

    /// Linear decay from `eps_start` to `eps_end` over the first half of the
    /// iterations, constant afterwards.
    pub fn epsilon_at(&self, iteration: usize) -> f64 {
        let half = self.iterations as f64 / 2.0;
        let frac = if half <= 0.0 {
            1.0
        } else {
            (iteration as f64 / half).min(1.0)
        };
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqlmReport {
    pub iteration: usize,
    pub mean_latency_s: f64,
    pub td_loss: f64,
    pub epsilon: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Episode {
    inputs: Vec<StepInput>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    total_latency: f64,
}

#[derive(Debug, Clone)]
pub struct DqlmTrainer {
    config: DqlmConfig,
    env_cfg: EnvConfig,
    grid: GridSpec,
    traces: Vec<SlotTrace>,
    net: QNetwork,
    online: ParamStore,
    target: ParamStore,
    adam: AdamState,
    iteration: usize,
    epochs_done: usize,
}

impl DqlmTrainer {
    pub fn new(config: DqlmConfig, env_cfg: EnvConfig, grid: GridSpec, traces: Vec<SlotTrace>) -> Result<Self, AgentError> {
        config.validate()?;
        env_cfg.validate()?;
        if traces.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let (net, online) = QNetwork::init(config.dims(grid.num_servers()), config.seed)?;
        let adam = AdamState::new(
            &online,
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
            net,
            target: online.clone(),
            online,
            adam,
            iteration: 0,
            epochs_done: 0,
        })
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn store(&self) -> &ParamStore {
        &self.online
    }

    pub fn target_store(&self) -> &ParamStore {
        &self.target
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn sample(&self, epsilon: f64) -> Result<Vec<Episode>, AgentError> {
        let it = self.iteration as u64;
        let mut pick = keyed_stream(self.config.seed, STREAM_EPISODES, it, 0);
        let n = self.config.episodes_per_iter;
        let mut envs = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let trace = &self.traces[pick.random_range(0..self.traces.len())];
            let mut env = Env::new(self.env_cfg.clone(), self.grid.clone())?;
            obs.push(env.reset(trace, pick.random::<u64>())?);
            envs.push(env);
        }
        let mut rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|e| keyed_stream(self.config.seed, STREAM_ACTIONS, it, e as u64))
            .collect();
        let mut prev: Vec<usize> = obs.iter().map(|o| o.u.index()).collect();
        let mut state = self.net.encoder.initial_state(n);
        let horizon = self.env_cfg.horizon_slots;
        let mut episodes = vec![
            Episode {
                inputs: Vec::with_capacity(horizon),
                actions: Vec::with_capacity(horizon),
                rewards: Vec::with_capacity(horizon),
                total_latency: 0.0,
            };
            n
        ];
        for _ in 0..horizon {
            let inputs: Vec<StepInput> = obs.iter().zip(&prev).map(|(o, &p)| StepInput::new(o, p)).collect();
            let h = self.net.encoder.step(&self.online, &mut state, &inputs)?;
            let q = self.net.head.forward(&self.online, &h)?.out;
            for b in 0..n {
                let a = epsilon_greedy(q.row_slice(b), epsilon, &mut rngs[b]);
                let out = envs[b].step(ServerId(a))?;
                let ep = &mut episodes[b];
                ep.inputs.push(inputs[b]);
                ep.actions.push(a);
                ep.rewards.push(out.reward);
                ep.total_latency += out.breakdown.total();
                obs[b] = out.obs;
                prev[b] = a;
            }
        }
        Ok(episodes)
    }

    /// One TD step on a minibatch; returns the loss before the step.
    fn td_step(&mut self, batch: &[&Episode]) -> Result<f64, AgentError> {
        let steps = batch.first().ok_or(AgentError::EmptyBatch)?.actions.len();
        let b = batch.len();
        let inputs: Vec<Vec<StepInput>> = (0..steps).map(|t| batch.iter().map(|e| e.inputs[t]).collect()).collect();
        let target_pass = self.net.encoder.forward(&self.target, &inputs)?;
        let q_next = self.net.head.forward(&self.target, &target_pass.stacked_hidden())?.out;
        let pass = self.net.encoder.forward(&self.online, &inputs)?;
        let h = pass.stacked_hidden();
        let head_pass = self.net.head.forward(&self.online, &h)?;
        let n = (steps * b) as f64;
        let mut q_sa = Vec::with_capacity(steps * b);
        let mut targets = Vec::with_capacity(steps * b);
        let mut d_q = Tensor::zeros(&[steps * b, self.net.dims.servers]);
        for t in 0..steps {
            for (i, ep) in batch.iter().enumerate() {
                let r = t * b + i;
                let boot = if t + 1 < steps {
                    let row = q_next.row_slice((t + 1) * b + i);
                    row[argmax(row)]
                } else {
                    0.0
                };
                let y = ep.rewards[t] + self.config.gamma * boot;
                let q = head_pass.out.row_slice(r)[ep.actions[t]];
                d_q.row_slice_mut(r)[ep.actions[t]] = 2.0 * (q - y) / n;
                q_sa.push(q);
                targets.push(y);
            }
        }
        self.online.zero_grads();
        let dh = self.net.head.backward(&mut self.online, &h, &head_pass, &d_q)?;
        self.net.encoder.backward(&mut self.online, &pass, &dh)?;
        if self.online.grads_finite() {
            self.adam.update(&mut self.online);
        } else {
            self.online.zero_grads();
        }
        Ok(td_loss(&q_sa, &targets))
    }

    pub fn train_iteration(&mut self) -> Result<DqlmReport, AgentError> {
        let start = Instant::now();
        let epsilon = self.config.epsilon_at(self.iteration);
        let episodes = self.sample(epsilon)?;
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        for epoch in 0..self.config.epochs {
            let mut rng = keyed_stream(self.config.seed, STREAM_SHUFFLE, self.iteration as u64, epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.config.minibatch_trajectories) {
                let batch: Vec<&Episode> = chunk.iter().map(|&i| &episodes[i]).collect();
                loss_sum += self.td_step(&batch)?;
                updates += 1;
            }
            self.epochs_done += 1;
            if self.epochs_done.is_multiple_of(self.config.target_sync_epochs) {
                self.target.copy_values_from(&self.online)?;
            }
        }
        let report = DqlmReport {
            iteration: self.iteration,
            mean_latency_s: episodes.iter().map(|e| e.total_latency).sum::<f64>() / episodes.len() as f64,
            td_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            epsilon,
            wall_s: start.elapsed().as_secs_f64(),
        };
        self.iteration += 1;
        Ok(report)
    }

    pub fn train(&mut self, mut on_report: impl FnMut(&DqlmReport)) -> Result<Vec<DqlmReport>, AgentError> {
        let mut reports = Vec::with_capacity(self.config.iterations);
        for _ in 0..self.config.iterations {
            let r = self.train_iteration()?;
            on_report(&r);
            reports.push(r);
        }
        Ok(reports)
    }

    /// Greedy agent over the current online network.
    pub fn agent(&self) -> DqlmAgent {
        DqlmAgent::new(self.net, self.online.clone(), 0.0, self.config.seed)
    }
}

/// ε-greedy policy over a Q-network.
#[derive(Debug, Clone)]
pub struct DqlmAgent {
    net: QNetwork,
    store: ParamStore,
    epsilon: f64,
    seed: u64,
    rng: Option<ChaCha8Rng>,
    state: Option<RecurrentState>,
    prev: usize,
}

impl DqlmAgent {
    pub fn new(net: QNetwork, store: ParamStore, epsilon: f64, seed: u64) -> Self {
        Self {
            net,
            store,
            epsilon,
            seed,
            rng: None,
            state: None,
            prev: 0,
        }
    }
}

impl Agent for DqlmAgent {
    fn name(&self) -> &str {
        "DQLM"
    }

    fn init(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), AgentError> {
        if ctx.grid.num_servers() != self.net.dims.servers {
            return Err(AgentError::InvalidConfig(format!(
                "Q-network built for {} servers, grid has {}",
                self.net.dims.servers,
                ctx.grid.num_servers()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ctx.seed);
        self.rng = Some(rng);
        self.state = Some(self.net.encoder.initial_state(1));
        self.prev = ctx.first_obs.u.index();
        Ok(())
    }

    fn act(&mut self, obs: &Observation, _t: usize) -> Result<AgentDecision, AgentError> {
        let (Some(state), Some(rng)) = (self.state.as_mut(), self.rng.as_mut()) else {
            return Err(AgentError::NotInitialized);
        };
        let h = self.net.encoder.step(&self.store, state, &[StepInput::new(obs, self.prev)])?;
        let q = self.net.head.forward(&self.store, &h)?.out.into_data();
        let action = epsilon_greedy(&q, self.epsilon, rng);
        self.prev = action;
        Ok(AgentDecision {
            action: ServerId(action),
            diagnostics: Diagnostics::QValues {
                q,
                epsilon: self.epsilon,
            },
        })
    }

    fn end_episode(&mut self) {
        self.state = None;
        self.rng = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::synth_trace;

    fn small_dims(servers: usize) -> ModelDims {
        ModelDims {
            servers,
            embed_dim: 2,
            lstm_hidden: 6,
            head_hidden: 5,
        }
    }

    fn context<'a>(grid: &'a GridSpec, cfg: &'a EnvConfig, seed: u64) -> EpisodeContext<'a> {
        EpisodeContext {
            first_obs: obs(0),
            grid,
            env_cfg: cfg,
            snapshot: None,
            seed,
        }
    }

    fn obs(u: usize) -> Observation {
        Observation {
            u: ServerId(u),
            rho: 3e7,
            c: 1e11,
            data: 1e7,
        }
    }

    #[test]
    fn hand_td_loss() {
        // one-step episode: r = −1, γ = 0, Q(h, a) = 0
        assert_eq!(td_loss(&[0.0], &[-1.0 + 0.0 * 0.0]), 1.0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let grid = GridSpec::synthetic(2, 2);
        let cfg = EnvConfig::default();
        let (net, store) = QNetwork::init(small_dims(4), 1).unwrap();
        let mut agent = DqlmAgent::new(net, store, 1.0, 7);
        agent.init(&context(&grid, &cfg, 0)).unwrap();
        let mut counts = [0usize; 4];
        for t in 0..10_000 {
            counts[agent.act(&obs(t % 4), t).unwrap().action.index()] += 1;
        }
        let expected = 2500.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of χ² with 3 degrees of freedom
        assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn greedy_follows_unique_max() {
        let grid = GridSpec::synthetic(2, 2);
        let cfg = EnvConfig::default();
        let (net, mut store) = QNetwork::init(small_dims(4), 1).unwrap();
        let [_, _, w2, b2] = net.head.params();
        store.value_mut(w2).fill(0.0);
        store.value_mut(b2).data_mut().copy_from_slice(&[0.1, -0.3, 0.7, 0.2]);
        let mut agent = DqlmAgent::new(net, store, 0.0, 3);
        agent.init(&context(&grid, &cfg, 5)).unwrap();
        for t in 0..50 {
            assert_eq!(agent.act(&obs(t % 4), t).unwrap().action, ServerId(2));
        }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = DqlmConfig {
            iterations: 10,
            ..DqlmConfig::default()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(5) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon_at(9) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon_at(2) - (1.0 - 0.95 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_syncs_target() {
        let grid = GridSpec::synthetic(2, 2);
        let env_cfg = EnvConfig {
            horizon_slots: 5,
            ..EnvConfig::default()
        };
        let traces: Vec<SlotTrace> = (0..3).map(|s| synth_trace(s, &grid, 5, [0.5, 1.5]).unwrap()).collect();
        let cfg = DqlmConfig {
            episodes_per_iter: 4,
            epochs: 2,
            minibatch_trajectories: 2,
            iterations: 2,
            lstm_hidden: 6,
            head_hidden: 5,
            seed: 4,
            ..DqlmConfig::default()
        };
        let run = || {
            let mut t = DqlmTrainer::new(cfg.clone(), env_cfg.clone(), grid.clone(), traces.clone()).unwrap();
            let reps: Vec<DqlmReport> = t
                .train(|_| {})
                .unwrap()
                .into_iter()
                .map(|r| DqlmReport { wall_s: 0.0, ..r })
                .collect();
            assert_eq!(t.store().values(), t.target_store().values());
            (reps, t.store().clone())
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a.iter().all(|r| r.td_loss.is_finite()));
    }
}
