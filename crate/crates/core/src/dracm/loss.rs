//! The combined training objective on a minibatch of whole trajectories.
//!
//! With `N` steps in the minibatch, ratio `ρ = exp(log π − log π')` and frozen
//! advantages `Â`:
//!
//! * actor objective `L_act = Σ min(ρÂ, clip(ρ, 1−ε, 1+ε)Â)/N + c_h·ΣH/N`
//! * critic loss `L_crit = Σ δ²/N` with `δ_t = r_t + γ v_{t+1} − v_t`, `v_T = 0`
//!
//! and the scalar minimized is `−L_act + L_crit`. The critic gradient flows
//! through both value terms of each `δ_t`.

use serde::{Deserialize, Serialize};

use super::network::{EncoderPass, HeadPass, StepInput};
use super::{DracmError, DracmModel, Trajectory};
use crate::tensorcore::{categorical_backward, Categorical, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean clipped surrogate.
    pub surrogate: f64,
    /// Mean policy entropy.
    pub entropy: f64,
    /// `surrogate + c_h · entropy`, to be maximized.
    pub actor_objective: f64,
    pub critic_loss: f64,
    /// `critic_loss − actor_objective`, to be minimized.
    pub total: f64,
    /// Fraction of steps where the clipped branch was selected and active.
    pub clip_fraction: f64,
}

/// Per-step `min(ρÂ, clip(ρ, 1−ε, 1+ε)Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

struct Forward {
    pass: EncoderPass,
    h: Tensor,
    actor: HeadPass,
    critic: HeadPass,
    dists: Vec<Categorical>,
}

fn check_batch(batch: &[&Trajectory], advantages: &[&[f64]]) -> Result<usize, DracmError> {
    let first = batch.first().ok_or(DracmError::EmptyBatch)?;
    let steps = first.len();
    if advantages.len() != batch.len() {
        return Err(DracmError::LengthMismatch {
            what: "advantage rows",
            got: advantages.len(),
            expected: batch.len(),
        });
    }
    for (i, (tr, adv)) in batch.iter().zip(advantages).enumerate() {
        for (what, got) in [
            ("trajectory steps", tr.len()),
            ("inputs", tr.inputs.len()),
            ("rewards", tr.rewards.len()),
            ("advantages", adv.len()),
        ] {
            if got != steps {
                return Err(DracmError::LengthMismatch {
                    what,
                    got,
                    expected: steps,
                });
            }
        }
        if tr.behavior_log_probs.len() != steps
            || tr.behavior_log_probs.iter().any(|l| !l.is_finite() || *l > 0.0)
        {
            return Err(DracmError::MissingBehaviorLogProb { index: i });
        }
    }
    Ok(steps)
}

fn forward(model: &DracmModel, store: &ParamStore, batch: &[&Trajectory], steps: usize) -> Result<Forward, DracmError> {
    let inputs: Vec<Vec<StepInput>> = (0..steps).map(|t| batch.iter().map(|tr| tr.inputs[t]).collect()).collect();
    let pass = model.encoder.forward(store, &inputs)?;
    let h = pass.stacked_hidden();
    let actor = model.actor.forward(store, &h)?;
    let critic = model.critic.forward(store, &h)?;
    let dists = (0..h.rows())
        .map(|r| Categorical::from_logits(actor.out.row_slice(r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Forward {
        pass,
        h,
        actor,
        critic,
        dists,
    })
}

/// Log-probabilities of the taken actions under the current parameters,
/// `[trajectory][step]`.
pub fn policy_log_probs(model: &DracmModel, store: &ParamStore, batch: &[&Trajectory]) -> Result<Vec<Vec<f64>>, DracmError> {
    let steps = batch.first().ok_or(DracmError::EmptyBatch)?.len();
    let fwd = forward(model, store, batch, steps)?;
    let b = batch.len();
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, tr)| (0..steps).map(|t| fwd.dists[t * b + i].log_probs[tr.actions[t]]).collect())
        .collect())
}

/// Loss value and the gradients on logits and values, both `N`-normalized.
fn evaluate_loss(
    fwd: &Forward,
    batch: &[&Trajectory],
    advantages: &[&[f64]],
    steps: usize,
    cfg: &LossConfig,
) -> (LossReport, Tensor, Tensor) {
    let b = batch.len();
    let n = (steps * b) as f64;
    let m = fwd.actor.out.cols();
    let mut d_logits = Tensor::zeros(&[steps * b, m]);
    let mut d_values = Tensor::zeros(&[steps * b, 1]);
    let (mut sum_surr, mut sum_ent, mut sum_sq, mut clipped_steps) = (0.0, 0.0, 0.0, 0usize);
    let v = fwd.critic.out.data();
    for t in 0..steps {
        for (i, tr) in batch.iter().enumerate() {
            let r = t * b + i;
            let dist = &fwd.dists[r];
            let a = tr.actions[t];
            let ratio = (dist.log_probs[a] - tr.behavior_log_probs[t]).exp();
            let adv = advantages[i][t];
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
            let d_logp = if unclipped <= clipped {
                -unclipped / n
            } else {
                clipped_steps += 1;
                0.0
            };
            sum_surr += unclipped.min(clipped);
            sum_ent += dist.entropy();
            let g = categorical_backward(dist, a, d_logp, -cfg.entropy_coef / n);
            d_logits.row_slice_mut(r).copy_from_slice(&g);
        }
    }
    // critic: δ_t = r_t + γ v_{t+1} − v_t with v_T = 0
    let delta = |t: usize, i: usize| {
        let next = if t + 1 < steps { v[(t + 1) * b + i] } else { 0.0 };
        batch[i].rewards[t] + cfg.gamma * next - v[t * b + i]
    };
    for t in 0..steps {
        for i in 0..b {
            let d = delta(t, i);
            sum_sq += d * d;
            let mut g = -d;
            if t > 0 {
                g += cfg.gamma * delta(t - 1, i);
            }
            d_values.data_mut()[t * b + i] = 2.0 * g / n;
        }
    }
    let surrogate = sum_surr / n;
    let entropy = sum_ent / n;
    let actor_objective = surrogate + cfg.entropy_coef * entropy;
    let critic_loss = sum_sq / n;
    let report = LossReport {
        surrogate,
        entropy,
        actor_objective,
        critic_loss,
        total: critic_loss - actor_objective,
        clip_fraction: clipped_steps as f64 / n,
    };
    (report, d_logits, d_values)
}

/// Loss on a minibatch without touching gradients.
pub fn dracm_loss(
    model: &DracmModel,
    store: &ParamStore,
    batch: &[&Trajectory],
    advantages: &[&[f64]],
    cfg: &LossConfig,
) -> Result<LossReport, DracmError> {
    let steps = check_batch(batch, advantages)?;
    let fwd = forward(model, store, batch, steps)?;
    Ok(evaluate_loss(&fwd, batch, advantages, steps, cfg).0)
}

/// Loss on a minibatch; gradients of the minimized scalar are added to the
/// store's gradient buffers.
pub fn dracm_loss_backward(
    model: &DracmModel,
    store: &mut ParamStore,
    batch: &[&Trajectory],
    advantages: &[&[f64]],
    cfg: &LossConfig,
) -> Result<LossReport, DracmError> {
    let steps = check_batch(batch, advantages)?;
    let fwd = forward(model, store, batch, steps)?;
    let (report, d_logits, d_values) = evaluate_loss(&fwd, batch, advantages, steps, cfg);
    let mut dh = model.actor.backward(store, &fwd.h, &fwd.actor, &d_logits)?;
    dh.add_assign(&model.critic.backward(store, &fwd.h, &fwd.critic, &d_values)?)?;
    model.encoder.backward(store, &fwd.pass, &dh)?;
    Ok(report)
}
