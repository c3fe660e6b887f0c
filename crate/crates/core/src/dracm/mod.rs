//! Recurrent actor-critic migration agent.
//!
//! A server-embedding + LSTM encoder summarizes the observation history into
//! `h_t`; an actor head turns `h_t` into a distribution over serving nodes and
//! a critic head estimates its value. Training alternates between sampling
//! trajectories with a frozen behavior policy and several epochs of clipped
//! importance-weighted updates on whole-trajectory minibatches.

mod gae;
mod loss;
pub mod network;
mod trainer;

pub use gae::compute_gae;
pub use loss::{clipped_surrogate, dracm_loss, dracm_loss_backward, policy_log_probs, LossConfig, LossReport};
pub use network::{featurize, Encoder, Head, ModelDims, RecurrentState, StepInput};
pub use trainer::{evaluate, DracmAgent, DracmTrainer, EvalReport, IterationReport, TrainerConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{CostBreakdown, EnvError};
use crate::tensorcore::{Categorical, ParamStore, Tensor, TensorError};
use crate::traces::TraceError;

#[derive(Debug, Error)]
pub enum DracmError {
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("trajectory {index} lacks a finite behavior log-probability for every step")]
    MissingBehaviorLogProb { index: usize },
    #[error("no test episodes to evaluate")]
    EmptyTestSet,
    #[error("empty minibatch or training set")]
    EmptyBatch,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Encoder plus actor and critic heads, addressing parameters in a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DracmModel {
    pub dims: ModelDims,
    pub encoder: Encoder,
    pub actor: Head,
    pub critic: Head,
}

impl DracmModel {
    /// Fresh parameters: uniform `±1/√fan_in` kernels, `±0.1` embeddings,
    /// zero biases except a forget-gate bias of 1.
    pub fn init(dims: ModelDims, seed: u64) -> Result<(Self, ParamStore), TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::register(&mut store, "enc", dims, &mut rng)?;
        let actor = Head::register(&mut store, "actor", dims.lstm_hidden, dims.head_hidden, dims.servers, &mut rng)?;
        let critic = Head::register(&mut store, "critic", dims.lstm_hidden, dims.head_hidden, 1, &mut rng)?;
        Ok((
            Self {
                dims,
                encoder,
                actor,
                critic,
            },
            store,
        ))
    }

    /// Re-binds a model to a loaded store, checking shapes.
    pub fn lookup(store: &ParamStore, dims: ModelDims) -> Result<Self, TensorError> {
        Ok(Self {
            dims,
            encoder: Encoder::lookup(store, "enc", dims)?,
            actor: Head::lookup(store, "actor", dims.servers)?,
            critic: Head::lookup(store, "critic", 1)?,
        })
    }

    /// Policy and value for each row of `h` (`B × H`).
    pub fn heads(&self, store: &ParamStore, h: &Tensor) -> Result<(Vec<Categorical>, Vec<f64>), TensorError> {
        let logits = self.actor.forward(store, h)?.out;
        let values = self.critic.forward(store, h)?.out;
        let dists = (0..h.rows())
            .map(|r| Categorical::from_logits(logits.row_slice(r)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((dists, values.into_data()))
    }
}

/// One sampled episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trace_id: String,
    pub env_seed: u64,
    /// Encoder inputs; step `t` holds `o_t` and `a_{t-1}` (with `a_{-1} = u_0`).
    pub inputs: Vec<StepInput>,
    pub actions: Vec<usize>,
    pub behavior_log_probs: Vec<f64>,
    /// Critic estimates `v(h_t)` at sampling time.
    pub behavior_values: Vec<f64>,
    /// Scaled rewards.
    pub rewards: Vec<f64>,
    pub breakdowns: Vec<CostBreakdown>,
    /// Undiscounted sum of scaled rewards.
    pub episode_return: f64,
    /// Total raw latency in seconds.
    pub total_latency: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}
