//! Context-free Thompson sampling over servers with a diagonal Gaussian
//! posterior on each server's per-slot cost.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentDecision, AgentError, Diagnostics, EpisodeContext};
use crate::env::{CostBreakdown, Observation};
use crate::topology::ServerId;

/// Independent Gaussian belief over each arm's mean cost, updated with the
/// known-variance conjugate rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub obs_var: f64,
}

impl BanditPosterior {
    pub fn new(arms: usize, prior_mean: f64, prior_var: f64, obs_var: f64) -> Self {
        assert!(prior_var > 0.0 && obs_var > 0.0, "variances must be positive");
        Self {
            mean: vec![prior_mean; arms],
            var: vec![prior_var; arms],
            obs_var,
        }
    }

    pub fn arms(&self) -> usize {
        self.mean.len()
    }

    /// One draw per arm from the posterior.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Arm with the lowest draw, lowest index on ties.
    pub fn select<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let draws = self.draw(rng);
        let mut best = 0;
        for (k, &d) in draws.iter().enumerate() {
            if d < draws[best] {
                best = k;
            }
        }
        (best, draws)
    }

    pub fn update(&mut self, arm: usize, cost: f64) -> Result<(), AgentError> {
        if arm >= self.arms() {
            return Err(AgentError::UnknownArm { arm, arms: self.arms() });
        }
        let (m_old, v_old) = (self.mean[arm], self.var[arm]);
        let v_new = 1.0 / (1.0 / v_old + 1.0 / self.obs_var);
        self.mean[arm] = v_new * (m_old / v_old + cost / self.obs_var);
        self.var[arm] = v_new;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MabtsConfig {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub obs_var: f64,
    /// Divide each observed cost by the running mean of all costs seen so far.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for MabtsConfig {
    fn default() -> Self {
        Self {
            prior_mean: 0.0,
            prior_var: 1e6,
            obs_var: 1.0,
            normalize: true,
            seed: 0,
        }
    }
}

/// Thompson-sampling migration agent. Its posterior persists across episodes,
/// so it keeps learning as long as it is played.
#[derive(Debug, Clone)]
pub struct MabtsAgent {
    config: MabtsConfig,
    posterior: BanditPosterior,
    cost_sum: f64,
    cost_count: u64,
    rng: Option<ChaCha8Rng>,
    last_arm: Option<usize>,
}

impl MabtsAgent {
    pub fn new(arms: usize, config: MabtsConfig) -> Self {
        Self {
            posterior: BanditPosterior::new(arms, config.prior_mean, config.prior_var, config.obs_var),
            config,
            cost_sum: 0.0,
            cost_count: 0,
            rng: None,
            last_arm: None,
        }
    }

    pub fn posterior(&self) -> &BanditPosterior {
        &self.posterior
    }

    /// Feeds one observed cost for `arm`, applying the running-mean
    /// normalization when configured.
    pub fn record(&mut self, arm: usize, cost: f64) -> Result<(), AgentError> {
        let value = if self.config.normalize {
            self.cost_sum += cost;
            self.cost_count += 1;
            let running = self.cost_sum / self.cost_count as f64;
            if running > 0.0 {
                cost / running
            } else {
                cost
            }
        } else {
            cost
        };
        self.posterior.update(arm, value)
    }
}

impl Agent for MabtsAgent {
    fn name(&self) -> &str {
        "MABTS"
    }

    fn init(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), AgentError> {
        if ctx.grid.num_servers() != self.posterior.arms() {
            return Err(AgentError::InvalidConfig(format!(
                "bandit has {} arms, grid has {} servers",
                self.posterior.arms(),
                ctx.grid.num_servers()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(ctx.seed);
        self.rng = Some(rng);
        self.last_arm = None;
        Ok(())
    }

    fn act(&mut self, _obs: &Observation, _t: usize) -> Result<AgentDecision, AgentError> {
        let rng = self.rng.as_mut().ok_or(AgentError::NotInitialized)?;
        let (arm, draws) = self.posterior.select(rng);
        self.last_arm = Some(arm);
        Ok(AgentDecision {
            action: ServerId(arm),
            diagnostics: Diagnostics::Samples(draws),
        })
    }

    fn observe(&mut self, _reward: f64, breakdown: &CostBreakdown) -> Result<(), AgentError> {
        let arm = self.last_arm.take().ok_or(AgentError::NotInitialized)?;
        self.record(arm, breakdown.total())
    }

    fn end_episode(&mut self) {
        self.rng = None;
    }
}
