//! The offline optimum: with the whole episode known in advance, the best
//! serving-node sequence is a shortest path through the time-expanded graph
//! of (slot, server) nodes. The graph is a layered DAG, so a forward dynamic
//! program over the layers finds it in `O(T·|M|²)`.

use serde::{Deserialize, Serialize};

use super::{Agent, AgentDecision, AgentError, EpisodeContext};
use crate::env::{slot_cost, EnvConfig, EnvError, Observation, OracleSnapshot};
use crate::topology::{GridSpec, ServerId};

/// `step_cost[t][prev][action]` flattened row-major, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTensor {
    pub horizon: usize,
    pub servers: usize,
    pub step_cost: Vec<f64>,
    pub a_init: ServerId,
}

impl CostTensor {
    pub fn new(horizon: usize, servers: usize, step_cost: Vec<f64>, a_init: ServerId) -> Self {
        assert_eq!(step_cost.len(), horizon * servers * servers, "cost tensor size");
        assert!(a_init.index() < servers, "initial server out of range");
        Self {
            horizon,
            servers,
            step_cost,
            a_init,
        }
    }

    pub fn get(&self, t: usize, prev: usize, action: usize) -> f64 {
        self.step_cost[(t * self.servers + prev) * self.servers + action]
    }

    /// Total of an action sequence, accumulated slot by slot.
    pub fn path_cost(&self, actions: &[ServerId]) -> f64 {
        let mut prev = self.a_init.index();
        let mut total = 0.0;
        for (t, a) in actions.iter().enumerate() {
            total += self.get(t, prev, a.index());
            prev = a.index();
        }
        total
    }
}

pub fn build_cost_tensor(snapshot: &OracleSnapshot, grid: &GridSpec, cfg: &EnvConfig) -> Result<CostTensor, EnvError> {
    let (horizon, servers) = (snapshot.horizon(), grid.num_servers());
    let mut step_cost = Vec::with_capacity(horizon * servers * servers);
    for t in 0..horizon {
        for p in 0..servers {
            for a in 0..servers {
                let inputs = snapshot.slot_inputs(t, ServerId(a));
                step_cost.push(slot_cost(ServerId(p), ServerId(a), &inputs, grid, cfg)?.0);
            }
        }
    }
    Ok(CostTensor::new(horizon, servers, step_cost, snapshot.user_cell[0]))
}

/// Minimum-cost action sequence and its total. Ties go to the lowest server
/// index, both for predecessors and for the final node.
pub fn optim_solve(ct: &CostTensor) -> (Vec<ServerId>, f64) {
    let m = ct.servers;
    if ct.horizon == 0 {
        return (Vec::new(), 0.0);
    }
    let mut back = vec![0usize; ct.horizon * m];
    let mut value: Vec<f64> = (0..m).map(|a| ct.get(0, ct.a_init.index(), a)).collect();
    let mut next = vec![0.0; m];
    for t in 1..ct.horizon {
        for (a, slot) in next.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_v = value[0] + ct.get(t, 0, a);
            for (p, &vp) in value.iter().enumerate().skip(1) {
                let v = vp + ct.get(t, p, a);
                if v < best_v {
                    best_v = v;
                    best = p;
                }
            }
            *slot = best_v;
            back[t * m + a] = best;
        }
        std::mem::swap(&mut value, &mut next);
    }
    let mut last = 0;
    for (a, &v) in value.iter().enumerate() {
        if v < value[last] {
            last = a;
        }
    }
    let total = value[last];
    let mut path = vec![ServerId(0); ct.horizon];
    let mut cur = last;
    for t in (0..ct.horizon).rev() {
        path[t] = ServerId(cur);
        cur = back[t * m + cur];
    }
    (path, total)
}

/// Replays the offline-optimal plan computed from the episode snapshot.
#[derive(Debug, Clone, Default)]
pub struct OptimAgent {
    plan: Option<Vec<ServerId>>,
    planned_total: f64,
}

impl OptimAgent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn planned_total(&self) -> f64 {
        self.planned_total
    }
}

impl Agent for OptimAgent {
    fn name(&self) -> &str {
        "OPTIM"
    }

    fn init(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), AgentError> {
        let snapshot = ctx.snapshot.ok_or(AgentError::MissingSnapshot)?;
        let ct = build_cost_tensor(snapshot, ctx.grid, ctx.env_cfg)?;
        let (plan, total) = optim_solve(&ct);
        self.plan = Some(plan);
        self.planned_total = total;
        Ok(())
    }

    fn act(&mut self, _obs: &Observation, t: usize) -> Result<AgentDecision, AgentError> {
        let plan = self.plan.as_ref().ok_or(AgentError::NotInitialized)?;
        plan.get(t).copied().map(AgentDecision::plain).ok_or(AgentError::NotInitialized)
    }

    fn end_episode(&mut self) {
        self.plan = None;
    }
}
