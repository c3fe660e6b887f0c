//! Self-checks behind the `check` command: hand-derived cost examples, the
//! offline optimum against exhaustive search, finite-difference gradients,
//! advantage and surrogate identities, and workload-sampling calibration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{optim_solve, CostTensor};
use crate::dracm::{
    clipped_surrogate, compute_gae, dracm_loss, dracm_loss_backward, policy_log_probs, DracmModel, LossConfig,
    ModelDims, StepInput, Trajectory,
};
use crate::env::{
    access_delay, backhaul_delay, computation_delay, keyed_stream, migration_delay, sample_server_load,
    sample_user_tasks, CostBreakdown, EnvConfig, Observation,
};
use crate::tensorcore::{
    categorical_backward, dense_backward, dense_forward, embed, embed_backward, finite_diff_check,
    lstm_backward_seq, lstm_forward_seq, uniform_init, Activation, Categorical, Coordinates, LstmGrads, LstmWeights,
    ParamStore, Tensor,
};
use crate::topology::ServerId;

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Runs every suite in a fixed order.
pub fn run_checks() -> Vec<CheckOutcome> {
    let mut out = vec![cost_examples(), optim_brute_force()];
    out.extend(gradient_checks().into_iter().map(|g| g.outcome()));
    out.push(gae_identities());
    out.push(surrogate_identities());
    out.push(workload_calibration());
    out
}

/// The twelve hand-derived delay examples, to within `1e-9`.
pub fn cost_examples() -> CheckOutcome {
    let cases: [(&str, f64, f64); 12] = [
        ("migration(0, 2)", migration_delay(0, 2.0).unwrap_or(f64::NAN), 0.0),
        ("migration(3, 2)", migration_delay(3, 2.0).unwrap_or(f64::NAN), 6.0),
        ("migration(1, 1.5)", migration_delay(1, 1.5).unwrap_or(f64::NAN), 1.5),
        ("computation(0, 0)", computation_delay(0.0, 0.0, 1.28e11).unwrap_or(f64::NAN), 0.0),
        ("computation(4e9, 6e10)", computation_delay(4e9, 6e10, 1.28e11).unwrap_or(f64::NAN), 0.5),
        ("computation(f, 0)", computation_delay(1.28e11, 0.0, 1.28e11).unwrap_or(f64::NAN), 1.0),
        ("access(0, 12e6)", access_delay(0.0, 12e6).unwrap_or(f64::NAN), 0.0),
        ("access(2.4e7, 12e6)", access_delay(2.4e7, 12e6).unwrap_or(f64::NAN), 2.0),
        ("access(4e7, 60e6)", access_delay(4e7, 60e6).unwrap_or(f64::NAN), 2.0 / 3.0),
        ("backhaul(0 hops)", backhaul_delay(0, 1e7, 5e8, 0.02).unwrap_or(f64::NAN), 0.0),
        ("backhaul(2 hops)", backhaul_delay(2, 1e7, 5e8, 0.02).unwrap_or(f64::NAN), 0.1),
        ("backhaul(1 hop, no data)", backhaul_delay(1, 0.0, 5e8, 0.02).unwrap_or(f64::NAN), 0.04),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= 1e-9))
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    CheckOutcome::new(
        "cost examples",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} examples within 1e-9", cases.len())
        } else {
            bad.join("; ")
        },
    )
}

/// Exhaustive minimum over all `|M|^T` sequences. Sequences are visited with
/// slot 0 as the fastest-changing digit and only a strictly smaller total
/// replaces the incumbent, which is the order the optimum's lowest-index
/// tie-breaking (applied from the last slot backwards) produces.
pub fn brute_force(ct: &CostTensor) -> (Vec<ServerId>, f64) {
    let m = ct.servers;
    let count = m.pow(ct.horizon as u32);
    let mut best: Option<(Vec<ServerId>, f64)> = None;
    let mut seq = vec![ServerId(0); ct.horizon];
    for code in 0..count {
        let mut c = code;
        for slot in seq.iter_mut() {
            *slot = ServerId(c % m);
            c /= m;
        }
        let cost = ct.path_cost(&seq);
        if best.as_ref().is_none_or(|(_, b)| cost < *b) {
            best = Some((seq.clone(), cost));
        }
    }
    best.unwrap_or_default()
}

/// Random cost tensor. Small integer costs make exact ties common, so the
/// tie-breaking rule is exercised as well as the minimum.
pub fn random_cost_tensor(rng: &mut ChaCha8Rng, horizon: usize, servers: usize) -> CostTensor {
    let costs = (0..horizon * servers * servers)
        .map(|_| f64::from(rng.random_range(0u8..4)))
        .collect();
    CostTensor::new(horizon, servers, costs, ServerId(rng.random_range(0..servers)))
}

/// The offline optimum against exhaustive search: 100 instances with
/// `|M| = 4, T = 5` and 20 with `|M| = 3, T = 6`.
pub fn optim_brute_force() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b71);
    let mut mismatches = Vec::new();
    let mut n = 0;
    for (count, servers, horizon) in [(100, 4, 5), (20, 3, 6)] {
        for _ in 0..count {
            let ct = random_cost_tensor(&mut rng, horizon, servers);
            let (path, total) = optim_solve(&ct);
            let (bf_path, bf_total) = brute_force(&ct);
            if total != bf_total || path != bf_path {
                mismatches.push(format!("instance {n}: {total} vs {bf_total}"));
            }
            n += 1;
        }
    }
    CheckOutcome::new(
        "optimum vs exhaustive search",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{n} instances, totals and paths identical")
        } else {
            mismatches.join("; ")
        },
    )
}

/// Worst relative finite-difference error of one backward routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub op: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    fn outcome(&self) -> CheckOutcome {
        CheckOutcome::new(
            &format!("gradient: {}", self.op),
            self.passed(),
            format!("max rel error {:.3e} (tolerance {:.0e})", self.max_rel_error, self.tolerance),
        )
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform_init(shape, 1.0, rng)
}

fn weighted_sum(a: &Tensor, w: &Tensor) -> f64 {
    a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
}

fn dense_check(act: Activation, seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, &[3, 4])).expect("fresh name");
    let w = store.add("w", random_tensor(&mut rng, &[4, 5])).expect("fresh name");
    let b = store.add("b", random_tensor(&mut rng, &[5])).expect("fresh name");
    let probe = random_tensor(&mut rng, &[3, 5]);
    let out = dense_forward(store.value(x), store.value(w), store.value(b), act).expect("shapes agree");
    let (mut gw, mut gb) = (Tensor::zeros(&[4, 5]), Tensor::zeros(&[5]));
    let dx = dense_backward(store.value(x), store.value(w), &out, act, &probe, &mut gw, &mut gb).expect("shapes agree");
    *store.grad_mut(x) = dx;
    *store.grad_mut(w) = gw;
    *store.grad_mut(b) = gb;
    let loss = |s: &ParamStore| {
        weighted_sum(
            &dense_forward(s.value(x), s.value(w), s.value(b), act).expect("shapes agree"),
            &probe,
        )
    };
    GradientCheck {
        op: format!("dense ({act:?})").to_lowercase(),
        max_rel_error: finite_diff_check(&store, loss, FD_STEP, Coordinates::All),
        tolerance: 1e-6,
    }
}

fn lstm_check(seed: u64) -> GradientCheck {
    let (steps, batch, nin, hidden) = (4, 2, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let xs = store
        .add("xs", random_tensor(&mut rng, &[steps * batch, nin]))
        .expect("fresh name");
    let wx = store.add("wx", random_tensor(&mut rng, &[nin, 4 * hidden])).expect("fresh name");
    let wh = store.add("wh", random_tensor(&mut rng, &[hidden, 4 * hidden])).expect("fresh name");
    let b = store.add("b", random_tensor(&mut rng, &[4 * hidden])).expect("fresh name");
    let h0 = random_tensor(&mut rng, &[batch, hidden]);
    let c0 = random_tensor(&mut rng, &[batch, hidden]);
    let probes: Vec<Tensor> = (0..steps).map(|_| random_tensor(&mut rng, &[batch, hidden])).collect();
    let split = |t: &Tensor| -> Vec<Tensor> {
        t.data()
            .chunks(batch * nin)
            .map(|c| Tensor::from_vec(&[batch, nin], c.to_vec()).expect("chunk size"))
            .collect()
    };
    let forward = |s: &ParamStore| {
        let w = LstmWeights {
            wx: s.value(wx),
            wh: s.value(wh),
            b: s.value(b),
        };
        lstm_forward_seq(&split(s.value(xs)), &h0, &c0, w).expect("shapes agree")
    };
    let caches = forward(&store);
    let (mut gwx, mut gwh, mut gb) = (
        Tensor::zeros(&[nin, 4 * hidden]),
        Tensor::zeros(&[hidden, 4 * hidden]),
        Tensor::zeros(&[4 * hidden]),
    );
    let dxs = {
        let w = LstmWeights {
            wx: store.value(wx),
            wh: store.value(wh),
            b: store.value(b),
        };
        let mut grads = LstmGrads {
            wx: &mut gwx,
            wh: &mut gwh,
            b: &mut gb,
        };
        lstm_backward_seq(&caches, &probes, w, &mut grads).expect("shapes agree")
    };
    let refs: Vec<&Tensor> = dxs.iter().collect();
    *store.grad_mut(xs) = Tensor::vstack(&refs).expect("equal widths");
    *store.grad_mut(wx) = gwx;
    *store.grad_mut(wh) = gwh;
    *store.grad_mut(b) = gb;
    let loss = |s: &ParamStore| {
        forward(s)
            .iter()
            .zip(&probes)
            .map(|(c, p)| weighted_sum(&c.h, p))
            .sum::<f64>()
    };
    GradientCheck {
        op: "lstm sequence".into(),
        max_rel_error: finite_diff_check(&store, loss, FD_STEP, Coordinates::All),
        tolerance: 1e-4,
    }
}

fn embed_check(seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let table = store.add("table", random_tensor(&mut rng, &[5, 3])).expect("fresh name");
    let lookups = [0usize, 3, 3, 4];
    let probes: Vec<Vec<f64>> = lookups
        .iter()
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut grad = Tensor::zeros(&[5, 3]);
    for (&i, p) in lookups.iter().zip(&probes) {
        embed_backward(&mut grad, i, p).expect("index in range");
    }
    *store.grad_mut(table) = grad;
    let loss = |s: &ParamStore| {
        lookups
            .iter()
            .zip(&probes)
            .map(|(&i, p)| {
                embed(s.value(table), i)
                    .expect("index in range")
                    .iter()
                    .zip(p)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum::<f64>()
    };
    GradientCheck {
        op: "embedding".into(),
        max_rel_error: finite_diff_check(&store, loss, FD_STEP, Coordinates::All),
        tolerance: 1e-4,
    }
}

fn categorical_check(seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let logits = store.add("logits", random_tensor(&mut rng, &[6])).expect("fresh name");
    let (action, d_logp, d_ent) = (2, 0.7, -0.3);
    let dist = Categorical::from_logits(store.value(logits).data()).expect("finite logits");
    *store.grad_mut(logits) = Tensor::row(categorical_backward(&dist, action, d_logp, d_ent));
    let loss = |s: &ParamStore| {
        let d = Categorical::from_logits(s.value(logits).data()).expect("finite logits");
        d_logp * d.log_probs[action] + d_ent * d.entropy()
    };
    GradientCheck {
        op: "categorical log-prob and entropy".into(),
        max_rel_error: finite_diff_check(&store, loss, FD_STEP, Coordinates::All),
        tolerance: 1e-4,
    }
}

fn toy_trajectory(rng: &mut ChaCha8Rng, steps: usize, servers: usize) -> Trajectory {
    let mut prev = rng.random_range(0..servers);
    let mut inputs = Vec::with_capacity(steps);
    let mut actions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let obs = Observation {
            u: ServerId(rng.random_range(0..servers)),
            rho: rng.random_range(1e7..6e7),
            c: rng.random_range(0.0..4e11),
            data: rng.random_range(0.0..4e7),
        };
        inputs.push(StepInput::new(&obs, prev));
        let a = rng.random_range(0..servers);
        actions.push(a);
        prev = a;
    }
    Trajectory {
        trace_id: "check".into(),
        env_seed: 0,
        inputs,
        actions,
        behavior_log_probs: vec![-1.0; steps],
        behavior_values: vec![0.0; steps],
        rewards: (0..steps).map(|_| rng.random_range(-2.0..0.0)).collect(),
        breakdowns: vec![CostBreakdown::default(); steps],
        episode_return: 0.0,
        total_latency: 0.0,
    }
}

const LOSS_CFG: LossConfig = LossConfig {
    gamma: 0.9,
    clip_eps: 0.2,
    entropy_coef: 0.05,
};

fn toy_dims() -> ModelDims {
    ModelDims {
        servers: 3,
        embed_dim: 2,
        lstm_hidden: 5,
        head_hidden: 4,
    }
}

/// Gradient of the whole minimized objective (actor, entropy and critic
/// terms through the heads and the recurrent encoder) on a minibatch where
/// some steps take the clipped branch and some do not.
fn dracm_loss_check(seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, mut store) = DracmModel::init(toy_dims(), seed).expect("valid dims");
    let mut trajs: Vec<Trajectory> = (0..2).map(|_| toy_trajectory(&mut rng, 2, 3)).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let logps = policy_log_probs(&model, &store, &refs).expect("consistent batch");
    // Offsets keep every ratio well away from the clip boundaries.
    let offsets = [[0.1, -0.6], [0.5, -0.05]];
    for ((tr, lp), off) in trajs.iter_mut().zip(logps).zip(offsets) {
        tr.behavior_log_probs = lp.iter().zip(off).map(|(l, o)| l + o).collect();
    }
    let advs = [vec![1.3, 0.7], vec![-0.9, 2.0]];
    let adv_refs: Vec<&[f64]> = advs.iter().map(Vec::as_slice).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    store.zero_grads();
    let report = dracm_loss_backward(&model, &mut store, &refs, &adv_refs, &LOSS_CFG).expect("consistent batch");
    let mixed = report.clip_fraction > 0.0 && report.clip_fraction < 1.0;
    let err = finite_diff_check(
        &store,
        |s| {
            dracm_loss(&model, s, &refs, &adv_refs, &LOSS_CFG)
                .expect("consistent batch")
                .total
        },
        FD_STEP,
        Coordinates::All,
    );
    GradientCheck {
        op: "full actor-critic loss".into(),
        max_rel_error: if mixed { err } else { f64::INFINITY },
        tolerance: 1e-4,
    }
}

/// Every backward routine and the full loss, with fixed seeds.
pub fn gradient_checks() -> Vec<GradientCheck> {
    vec![
        dense_check(Activation::Tanh, 1),
        dense_check(Activation::Identity, 2),
        lstm_check(3),
        embed_check(4),
        categorical_check(5),
        dracm_loss_check(6),
    ]
}

fn discounted_minus_baseline(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let ret: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            ret + gamma.powi((n - t) as i32) * values[n] - values[t]
        })
        .collect()
}

/// `λ = 0` gives the TD errors exactly, `λ = 1` the discounted return minus
/// the baseline to `1e-10`, and the two-step hand case.
pub fn gae_identities() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ae);
    let mut failures = Vec::new();
    match compute_gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], 1.0, 1.0) {
        Ok((adv, _)) if adv == [2.0, 1.0] => {}
        other => failures.push(format!("hand case gave {other:?}")),
    }
    for case in 0..200 {
        let n = rng.random_range(1..40);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut values: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gamma = rng.random_range(0.5..=1.0);
        let Ok((adv0, delta)) = compute_gae(&rewards, &values, gamma, 0.0) else {
            failures.push(format!("case {case}: rejected"));
            continue;
        };
        if adv0 != delta {
            failures.push(format!("case {case}: lambda 0 differs from TD errors"));
        }
        values[n] = 0.0;
        let Ok((adv1, _)) = compute_gae(&rewards, &values, gamma, 1.0) else {
            failures.push(format!("case {case}: rejected"));
            continue;
        };
        let direct = discounted_minus_baseline(&rewards, &values, gamma);
        let worst = adv1
            .iter()
            .zip(&direct)
            .map(|(a, d)| (a - d).abs())
            .fold(0.0, f64::max);
        if !(worst < 1e-10) {
            failures.push(format!("case {case}: lambda 1 off by {worst:e}"));
        }
    }
    CheckOutcome::new(
        "advantage identities",
        failures.is_empty(),
        if failures.is_empty() {
            "hand case and 200 random cases".to_string()
        } else {
            failures.join("; ")
        },
    )
}

/// The two hand cases, and `ratio ≡ 1 ⟹ surrogate = mean(Â)` plus the
/// entropy bonus, exactly.
pub fn surrogate_identities() -> CheckOutcome {
    let mut failures = Vec::new();
    if clipped_surrogate(1.5, 1.0, 0.2) != 1.2 {
        failures.push(format!("ratio 1.5, adv 1 gave {}", clipped_surrogate(1.5, 1.0, 0.2)));
    }
    if clipped_surrogate(0.5, -1.0, 0.2) != -0.8 {
        failures.push(format!("ratio 0.5, adv -1 gave {}", clipped_surrogate(0.5, -1.0, 0.2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a);
    let (model, store) = DracmModel::init(toy_dims(), 17).expect("valid dims");
    let (batch, steps) = (3, 4);
    let mut trajs: Vec<Trajectory> = (0..batch).map(|_| toy_trajectory(&mut rng, steps, 3)).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let logps = policy_log_probs(&model, &store, &refs).expect("consistent batch");
    for (tr, lp) in trajs.iter_mut().zip(logps) {
        tr.behavior_log_probs = lp;
    }
    let advs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..steps).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let adv_refs: Vec<&[f64]> = advs.iter().map(Vec::as_slice).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    match dracm_loss(&model, &store, &refs, &adv_refs, &LOSS_CFG) {
        Ok(rep) => {
            // Same summation order as the loss: step-major over the batch.
            let mut sum = 0.0;
            for t in 0..steps {
                for a in &advs {
                    sum += a[t];
                }
            }
            let mean = sum / (batch * steps) as f64;
            if rep.surrogate != mean || rep.actor_objective != mean + LOSS_CFG.entropy_coef * rep.entropy {
                failures.push(format!(
                    "ratio one: surrogate {} vs mean advantage {mean}",
                    rep.surrogate
                ));
            }
        }
        Err(e) => failures.push(format!("ratio one: {e}")),
    }
    CheckOutcome::new(
        "clipped surrogate identities",
        failures.is_empty(),
        if failures.is_empty() {
            "hand cases and ratio-one identity exact".to_string()
        } else {
            failures.join("; ")
        },
    )
}

/// Measured workload statistics next to their analytic values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Mean task count per slot at the default user rate of 2, over `10⁵` slots.
    pub mean_user_tasks: f64,
    /// Mean background load at a fixed rate of 10, over `10⁴` slots, in cycles.
    pub mean_server_load: f64,
    /// `10 · E[data] · E[κ]`.
    pub expected_server_load: f64,
    pub data_range_seen: [f64; 2],
    pub kappa_range_seen: [f64; 2],
    pub mean_data: f64,
    pub mean_kappa: f64,
}

pub fn workload_calibration_stats() -> Calibration {
    let cfg = EnvConfig::default();
    let mut rng = keyed_stream(0xca1, 9, 0, 0);
    let mut count = 0usize;
    let (mut dmin, mut dmax, mut kmin, mut kmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let (mut dsum, mut ksum) = (0.0, 0.0);
    let slots = 100_000;
    for _ in 0..slots {
        for t in sample_user_tasks(&mut rng, &cfg) {
            count += 1;
            dmin = dmin.min(t.data);
            dmax = dmax.max(t.data);
            kmin = kmin.min(t.kappa);
            kmax = kmax.max(t.kappa);
            dsum += t.data;
            ksum += t.kappa;
        }
    }
    let mut rng = keyed_stream(0xca1, 10, 0, 0);
    let load_slots = 10_000;
    let load: f64 = (0..load_slots).map(|_| sample_server_load(&mut rng, 10.0, &cfg)).sum();
    let mean_of = |[lo, hi]: [f64; 2]| (lo + hi) / 2.0;
    Calibration {
        mean_user_tasks: count as f64 / slots as f64,
        mean_server_load: load / load_slots as f64,
        expected_server_load: 10.0 * mean_of(cfg.data_range_bits) * mean_of(cfg.kappa_range_cycles_per_bit),
        data_range_seen: [dmin, dmax],
        kappa_range_seen: [kmin, kmax],
        mean_data: dsum / count as f64,
        mean_kappa: ksum / count as f64,
    }
}

/// Poisson count mean `2 ± 0.02`, background load mean `10μ ± 3%`, task
/// sizes and densities inside their ranges with means within 1% of the
/// midpoints.
pub fn workload_calibration() -> CheckOutcome {
    let cfg = EnvConfig::default();
    let c = workload_calibration_stats();
    let within = |x: f64, [lo, hi]: [f64; 2]| x >= lo && x <= hi;
    let mid = |[lo, hi]: [f64; 2]| (lo + hi) / 2.0;
    let checks = [
        ("task count mean", (c.mean_user_tasks - 2.0).abs() <= 0.02),
        (
            "server load mean",
            ((c.mean_server_load - c.expected_server_load) / c.expected_server_load).abs() <= 0.03,
        ),
        (
            "data range",
            within(c.data_range_seen[0], cfg.data_range_bits) && within(c.data_range_seen[1], cfg.data_range_bits),
        ),
        (
            "kappa range",
            within(c.kappa_range_seen[0], cfg.kappa_range_cycles_per_bit)
                && within(c.kappa_range_seen[1], cfg.kappa_range_cycles_per_bit),
        ),
        ("data mean", ((c.mean_data - mid(cfg.data_range_bits)) / mid(cfg.data_range_bits)).abs() <= 0.01),
        (
            "kappa mean",
            ((c.mean_kappa - mid(cfg.kappa_range_cycles_per_bit)) / mid(cfg.kappa_range_cycles_per_bit)).abs() <= 0.01,
        ),
    ];
    let bad: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    CheckOutcome::new(
        "workload calibration",
        bad.is_empty(),
        format!(
            "tasks/slot {:.4}, load/expected {:.4}{}",
            c.mean_user_tasks,
            c.mean_server_load / c.expected_server_load,
            if bad.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", bad.join(", "))
            }
        ),
    )
}
