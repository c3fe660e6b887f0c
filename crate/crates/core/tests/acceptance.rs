//! Acceptance suite: twelve criteria, each printed as one PASS/FAIL line with
//! its measured value and runtime. Runs as a plain binary (no libtest
//! harness) so the lines always appear; exits non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use migrate_core::agents::{
    optim_solve, run_episode, Agent, AgentKind, AlwaysMigrate, CostTensor, DqlmConfig, DqlmTrainer, MabtsAgent,
    MabtsConfig, NeverMigrate, OptimAgent,
};
use migrate_core::dracm::{
    clipped_surrogate, compute_gae, dracm_loss, policy_log_probs, DracmModel, DracmTrainer, LossConfig, ModelDims,
    StepInput, TrainerConfig, Trajectory,
};
use migrate_core::env::{
    access_delay, backhaul_delay, computation_delay, migration_delay, slot_cost, CostBreakdown, Env, EnvConfig,
    Observation, SlotInputs,
};
use migrate_core::harness::{self, checks, ExperimentConfig, COMPARISON_CSV, CONFIG_JSON, METRICS_CSV};
use migrate_core::topology::{GridSpec, ServerId};
use migrate_core::traces::{synth_trace, SlotTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// 1. Cost model

fn criterion_1() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let examples = [
        (migration_delay(0, 2.0), 0.0),
        (migration_delay(3, 2.0), 6.0),
        (migration_delay(1, 1.5), 1.5),
        (computation_delay(0.0, 0.0, 1.28e11), 0.0),
        (computation_delay(4e9, 6e10, 1.28e11), (6e10 + 4e9) / 1.28e11),
        (computation_delay(1.28e11, 0.0, 1.28e11), 1.0),
        (access_delay(0.0, 12e6), 0.0),
        (access_delay(2.4e7, 12e6), 2.0),
        (access_delay(4e7, 60e6), 2.0 / 3.0),
        (backhaul_delay(0, 1e7, 5e8, 0.02), 0.0),
        (backhaul_delay(2, 1e7, 5e8, 0.02), 0.1),
        (backhaul_delay(1, 0.0, 5e8, 0.02), 0.04),
    ];
    for (i, (got, want)) in examples.iter().enumerate() {
        let got = got.as_ref().map_err(|e| format!("example {}: {e}", i + 1))?;
        ensure(close(*got, *want), format!("example {}: {got} != {want}", i + 1))?;
    }
    ensure(close(computation_delay(4e9, 6e10, 1.28e11).unwrap(), 0.5), "0.5 s example")?;
    // Slot totals composed from the examples above.
    let grid = GridSpec::rome();
    let cfg = EnvConfig::default();
    let o = grid.server_at(0, 0).unwrap();
    let next = grid.server_at(0, 1).unwrap();
    let idle = SlotInputs {
        u: o,
        rho: 12e6,
        c: 0.0,
        data: 0.0,
        w_action: 0.0,
        mc: 2.0,
    };
    let busy = SlotInputs {
        c: 4e9,
        w_action: 6e10,
        data: 2.4e7,
        ..idle
    };
    let moved = SlotInputs {
        rho: 60e6,
        data: 1e7,
        mc: 1.0,
        ..idle
    };
    let s0 = slot_cost(o, o, &idle, &grid, &cfg).unwrap().0;
    let s1 = slot_cost(o, o, &busy, &grid, &cfg).unwrap().0;
    let s2 = slot_cost(o, next, &moved, &grid, &cfg).unwrap().0;
    ensure(s0 == 0.0, format!("idle slot {s0}"))?;
    ensure(close(s1, 2.5), format!("busy slot {s1}"))?;
    ensure(close(s2, 1.0 + 1e7 / 60e6 + 0.06), format!("migrating slot {s2}"))?;
    Ok(format!("12 delay examples and 3 slot totals within 1e-9 (migrating slot {s2:.4} s)"))
}

// ---------------------------------------------------------------------------
// 2. Offline optimum vs exhaustive enumeration

/// All minimum-total sequences, then the one whose reversed sequence is
/// lexicographically smallest: lowest server index, resolved from the last
/// slot backwards.
fn enumerate_optimum(ct: &CostTensor) -> (Vec<ServerId>, f64) {
    fn walk(ct: &CostTensor, t: usize, prev: usize, acc: f64, seq: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
        if t == ct.horizon {
            out.push((seq.clone(), acc));
            return;
        }
        for a in 0..ct.servers {
            seq.push(a);
            walk(ct, t + 1, a, acc + ct.get(t, prev, a), seq, out);
            seq.pop();
        }
    }
    let mut all = Vec::new();
    walk(ct, 0, ct.a_init.index(), 0.0, &mut Vec::new(), &mut all);
    let best = all.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    let path = all
        .into_iter()
        .filter(|(_, c)| *c == best)
        .map(|(s, _)| s)
        .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
        .unwrap();
    (path.into_iter().map(ServerId).collect(), best)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut n = 0;
    let mut ties = 0;
    for (count, servers, horizon) in [(100, 4usize, 5usize), (20, 3, 6)] {
        for k in 0..count {
            // Half the instances use small integer costs so exact ties are frequent.
            let integer = k % 2 == 0;
            let costs: Vec<f64> = (0..horizon * servers * servers)
                .map(|_| {
                    if integer {
                        f64::from(rng.random_range(0u8..4))
                    } else {
                        rng.random_range(0.0..10.0)
                    }
                })
                .collect();
            let ct = CostTensor::new(horizon, servers, costs, ServerId(rng.random_range(0..servers)));
            let (path, total) = optim_solve(&ct);
            let (bf_path, bf_total) = enumerate_optimum(&ct);
            ensure(total == bf_total, format!("instance {n}: total {total} vs {bf_total}"))?;
            ensure(path == bf_path, format!("instance {n}: path {path:?} vs {bf_path:?}"))?;
            if integer {
                ties += 1;
            }
            n += 1;
        }
    }
    Ok(format!("{n} instances ({ties} with integer costs) match in total and path"))
}

// ---------------------------------------------------------------------------
// 3. Optimum dominance on shared episodes

fn criterion_3() -> Outcome {
    let grid = GridSpec::synthetic(8, 8);
    let env_cfg = EnvConfig::default();
    assert_eq!((grid.num_servers(), env_cfg.horizon_slots), (64, 100));
    let train: Vec<SlotTrace> = (0..8).map(|s| synth_trace(500 + s, &grid, 100, [0.5, 1.5]).unwrap()).collect();
    let test: Vec<SlotTrace> = (0..15).map(|s| synth_trace(900 + s, &grid, 100, [0.5, 1.5]).unwrap()).collect();
    let seeds = [31u64, 32];
    let mut dracm = DracmTrainer::new(
        TrainerConfig {
            seed: 3,
            iterations: 2,
            epochs: 2,
            episodes_per_iter: 8,
            ..TrainerConfig::default()
        },
        env_cfg.clone(),
        grid.clone(),
        train.clone(),
    )
    .map_err(|e| e.to_string())?;
    dracm.train(|_| {}).map_err(|e| e.to_string())?;
    let mut dqlm = DqlmTrainer::new(
        DqlmConfig {
            seed: 3,
            iterations: 2,
            epochs: 2,
            episodes_per_iter: 8,
            ..DqlmConfig::default()
        },
        env_cfg.clone(),
        grid.clone(),
        train,
    )
    .map_err(|e| e.to_string())?;
    dqlm.train(|_| {}).map_err(|e| e.to_string())?;
    let mut optim = OptimAgent::new();
    let mut others: Vec<Box<dyn Agent>> = vec![
        Box::new(NeverMigrate::new()),
        Box::new(AlwaysMigrate),
        Box::new(MabtsAgent::new(64, MabtsConfig::default())),
        Box::new(dqlm.agent()),
        Box::new(dracm.agent()),
        Box::new(dracm.agent().sampling(5)),
    ];
    let mut env = Env::new(env_cfg, grid).unwrap();
    let mut episodes = 0;
    let mut min_margin = f64::INFINITY;
    for trace in &test {
        for &seed in &seeds {
            let best = run_episode(&mut env, &mut optim, trace, seed).map_err(|e| e.to_string())?;
            for agent in others.iter_mut() {
                let r = run_episode(&mut env, agent.as_mut(), trace, seed).map_err(|e| e.to_string())?;
                ensure(r.digest == best.digest, format!("{} saw different episode data", agent.name()))?;
                ensure(
                    best.total <= r.total,
                    format!(
                        "{} beat OPTIM on {} / {seed}: {} < {}",
                        agent.name(),
                        trace.id,
                        r.total,
                        best.total
                    ),
                )?;
                min_margin = min_margin.min(r.total - best.total);
            }
            episodes += 1;
        }
    }
    ensure(episodes == 30, "episode count")?;
    Ok(format!(
        "{episodes} episodes x 6 agents (|M|=64, T=100); smallest margin {min_margin:.4} s"
    ))
}

// ---------------------------------------------------------------------------
// 4. Gradients

fn criterion_4() -> Outcome {
    let results = checks::gradient_checks();
    let mut parts = Vec::new();
    for g in &results {
        let tol = if g.op.starts_with("dense") { 1e-6 } else { 1e-4 };
        ensure(
            g.max_rel_error < tol,
            format!("{}: {:.3e} >= {tol:.0e}", g.op, g.max_rel_error),
        )?;
        parts.push(format!("{} {:.1e}", g.op, g.max_rel_error));
    }
    ensure(results.iter().any(|g| g.op.contains("loss")), "full loss not checked")?;
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 5. Advantage identities

fn criterion_5() -> Outcome {
    let (adv, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure(adv == [2.0, 1.0], format!("hand case gave {adv:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = rng.random_range(1..60);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut values: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gamma = rng.random_range(0.5..=1.0);
        let (adv0, delta) = compute_gae(&rewards, &values, gamma, 0.0).map_err(|e| e.to_string())?;
        let td: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * values[t + 1] - values[t]).collect();
        ensure(adv0 == delta && adv0 == td, format!("case {case}: lambda 0 is not the TD error"))?;
        values[n] = 0.0;
        let (adv1, _) = compute_gae(&rewards, &values, gamma, 1.0).map_err(|e| e.to_string())?;
        for t in 0..n {
            let ret: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            worst = worst.max((adv1[t] - (ret - values[t])).abs());
        }
    }
    ensure(worst < 1e-10, format!("lambda 1 deviates by {worst:e}"))?;
    Ok(format!("hand case exact; 500 random cases, lambda=1 max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 6. Clipped surrogate identities

fn random_trajectory(rng: &mut ChaCha8Rng, steps: usize, servers: usize) -> Trajectory {
    let mut prev = rng.random_range(0..servers);
    let (mut inputs, mut actions) = (Vec::new(), Vec::new());
    for _ in 0..steps {
        let obs = Observation {
            u: ServerId(rng.random_range(0..servers)),
            rho: rng.random_range(1e7..6e7),
            c: rng.random_range(0.0..4e11),
            data: rng.random_range(0.0..4e7),
        };
        inputs.push(StepInput::new(&obs, prev));
        prev = rng.random_range(0..servers);
        actions.push(prev);
    }
    Trajectory {
        trace_id: "acceptance".into(),
        env_seed: 0,
        inputs,
        actions,
        behavior_log_probs: vec![0.0; steps],
        behavior_values: vec![0.0; steps],
        rewards: (0..steps).map(|_| rng.random_range(-3.0..0.0)).collect(),
        breakdowns: vec![CostBreakdown::default(); steps],
        episode_return: 0.0,
        total_latency: 0.0,
    }
}

fn criterion_6() -> Outcome {
    let a = clipped_surrogate(1.5, 1.0, 0.2);
    let b = clipped_surrogate(0.5, -1.0, 0.2);
    ensure((a - 1.2).abs() < 1e-15, format!("ratio 1.5, adv 1 gave {a}"))?;
    ensure((b + 0.8).abs() < 1e-15, format!("ratio 0.5, adv -1 gave {b}"))?;
    let cfg = LossConfig {
        gamma: 0.99,
        clip_eps: 0.2,
        entropy_coef: 0.01,
    };
    let dims = ModelDims {
        servers: 5,
        embed_dim: 2,
        lstm_hidden: 8,
        head_hidden: 6,
    };
    let (model, store) = DracmModel::init(dims, 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (batch, steps) = (4, 7);
    let mut trajs: Vec<Trajectory> = (0..batch).map(|_| random_trajectory(&mut rng, steps, 5)).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let logps = policy_log_probs(&model, &store, &refs).map_err(|e| e.to_string())?;
    for (tr, lp) in trajs.iter_mut().zip(logps) {
        tr.behavior_log_probs = lp;
    }
    let advs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..steps).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let adv_refs: Vec<&[f64]> = advs.iter().map(Vec::as_slice).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let rep = dracm_loss(&model, &store, &refs, &adv_refs, &cfg).map_err(|e| e.to_string())?;
    // Summed step-major over the batch, the order the objective uses.
    let mut sum = 0.0;
    for t in 0..steps {
        for row in &advs {
            sum += row[t];
        }
    }
    let mean = sum / (batch * steps) as f64;
    ensure(rep.surrogate == mean, format!("surrogate {} vs mean advantage {mean}", rep.surrogate))?;
    ensure(
        rep.actor_objective == mean + cfg.entropy_coef * rep.entropy,
        format!("objective {} vs {}", rep.actor_objective, mean + cfg.entropy_coef * rep.entropy),
    )?;
    Ok(format!("hand cases 1.2 / -0.8; ratio-one objective = mean(A) + c_h H exactly ({mean:.6})"))
}

// ---------------------------------------------------------------------------
// 7. Determinism

fn without_wall_clock(csv_text: &str) -> String {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let wall = header.iter().position(|h| *h == "wall_s");
    std::iter::once(header.clone())
        .chain(lines.map(|l| l.split(',').collect()))
        .map(|cols: Vec<&str>| {
            cols.iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != wall)
                .map(|(_, c)| *c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_7() -> Outcome {
    // Trainer level: trajectories, losses and parameters.
    let grid = GridSpec::synthetic(3, 3);
    let env_cfg = EnvConfig {
        horizon_slots: 12,
        ..EnvConfig::default()
    };
    let traces: Vec<SlotTrace> = (0..4).map(|s| synth_trace(s, &grid, 12, [0.5, 1.5]).unwrap()).collect();
    let tcfg = TrainerConfig {
        seed: 11,
        iterations: 3,
        epochs: 2,
        episodes_per_iter: 6,
        minibatch_trajectories: 3,
        ..TrainerConfig::default()
    };
    let make = || DracmTrainer::new(tcfg.clone(), env_cfg.clone(), grid.clone(), traces.clone()).unwrap();
    let (mut a, mut b) = (make(), make());
    ensure(a.sample().unwrap() == b.sample().unwrap(), "sampled trajectories differ")?;
    for _ in 0..3 {
        let (ra, rb) = (a.train_iteration().unwrap(), b.train_iteration().unwrap());
        ensure(
            (ra.mean_return, ra.actor_loss, ra.critic_loss, ra.entropy, ra.mean_latency_s)
                == (rb.mean_return, rb.actor_loss, rb.critic_loss, rb.entropy, rb.mean_latency_s),
            "iteration reports differ",
        )?;
    }
    ensure(a.store() == b.store(), "trained parameters differ")?;
    ensure(a.sample().unwrap() == b.sample().unwrap(), "post-training trajectories differ")?;

    // Pipeline level: every artifact of two identical runs.
    let cfg = ExperimentConfig {
        seed: 4,
        synthetic_rows: 3,
        synthetic_cols: 3,
        agents: AgentKind::ALL.to_vec(),
        train_traces: 4,
        test_traces: 3,
        env: env_cfg,
        dracm: TrainerConfig {
            iterations: 2,
            epochs: 2,
            episodes_per_iter: 4,
            ..TrainerConfig::default()
        },
        dqlm: DqlmConfig {
            iterations: 2,
            epochs: 2,
            episodes_per_iter: 4,
            ..DqlmConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        harness::run(&cfg, d.path()).map_err(|e| e.to_string())?;
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    let (p, q) = (dirs[0].path(), dirs[1].path());
    for f in [COMPARISON_CSV, CONFIG_JSON, "checkpoints/dracm.bin", "checkpoints/dqlm.bin"] {
        ensure(read(p, f) == read(q, f), format!("{f} differs"))?;
    }
    let (m1, m2) = (
        String::from_utf8(read(p, METRICS_CSV)).unwrap(),
        String::from_utf8(read(q, METRICS_CSV)).unwrap(),
    );
    ensure(without_wall_clock(&m1) == without_wall_clock(&m2), "metrics differ")?;
    ensure(m1.lines().count() == 5, "metrics row count")?;
    Ok("trajectories, losses, parameters and all CSVs/checkpoints byte-identical (wall_s excluded)".into())
}

// ---------------------------------------------------------------------------
// 8–10. Toy-world training

const TOY_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TOY_ITERATIONS: usize = 100;
const TOY_EVAL_SEEDS: [u64; 2] = [7001, 7002];
const MA_WINDOW: usize = 20;

struct ToyWorld {
    nm: f64,
    am: f64,
    optim: f64,
    runs: Vec<ToyRun>,
    wall: Duration,
}

struct ToyRun {
    seed: u64,
    eval: f64,
    returns: Vec<f64>,
}

/// 3 × 3 servers, 20-slot episodes, 20 training traces and 10 held-out ones.
fn toy_world() -> ToyWorld {
    let start = Instant::now();
    let grid = GridSpec::synthetic(3, 3);
    let env_cfg = EnvConfig {
        horizon_slots: 20,
        ..EnvConfig::default()
    };
    let train: Vec<SlotTrace> = (0..20).map(|s| synth_trace(s, &grid, 20, [0.5, 1.5]).unwrap()).collect();
    let test: Vec<SlotTrace> = (100..110).map(|s| synth_trace(s, &grid, 20, [0.5, 1.5]).unwrap()).collect();
    let mut env = Env::new(env_cfg.clone(), grid.clone()).unwrap();
    let mut mean_of = |agent: &mut dyn Agent| {
        let mut totals = Vec::new();
        for t in &test {
            for &s in &TOY_EVAL_SEEDS {
                totals.push(run_episode(&mut env, agent, t, s).unwrap().total);
            }
        }
        totals.iter().sum::<f64>() / totals.len() as f64
    };
    let nm = mean_of(&mut NeverMigrate::new());
    let am = mean_of(&mut AlwaysMigrate);
    let optim = mean_of(&mut OptimAgent::new());
    let runs = TOY_SEEDS
        .iter()
        .map(|&seed| {
            let cfg = TrainerConfig {
                seed,
                iterations: TOY_ITERATIONS,
                epochs: 4,
                ..TrainerConfig::default()
            };
            let mut trainer = DracmTrainer::new(cfg, env_cfg.clone(), grid.clone(), train.clone()).unwrap();
            let reports = trainer.train(|_| {}).unwrap();
            let eval = trainer.evaluate(&test, &TOY_EVAL_SEEDS).unwrap().mean_latency_s;
            ToyRun {
                seed,
                eval,
                returns: reports.iter().map(|r| r.mean_return).collect(),
            }
        })
        .collect();
    ToyWorld {
        nm,
        am,
        optim,
        runs,
        wall: start.elapsed(),
    }
}

fn criterion_8(w: &ToyWorld) -> Outcome {
    let bar = w.nm.min(w.am);
    let wins = w.runs.iter().filter(|r| r.eval <= bar).count();
    let evals: Vec<String> = w.runs.iter().map(|r| format!("s{}={:.1}", r.seed, r.eval)).collect();
    let detail = format!(
        "{wins}/5 seeds <= min(NM {:.1}, AM {:.1}) after {TOY_ITERATIONS} iterations [{}], training {:.0}s",
        w.nm,
        w.am,
        evals.join(" "),
        w.wall.as_secs_f64()
    );
    ensure(wins >= 4, detail.clone())?;
    Ok(detail)
}

fn criterion_9(w: &ToyWorld) -> Outcome {
    let gaps: Vec<f64> = w.runs.iter().map(|r| (r.eval - w.optim) / w.optim).collect();
    let within = gaps.iter().filter(|&&g| g <= 0.30).count();
    let shown: Vec<String> = gaps.iter().map(|g| format!("{:.1}%", 100.0 * g)).collect();
    let detail = format!(
        "{within}/5 seeds within 30% of OPTIM {:.1} [gaps {}]",
        w.optim,
        shown.join(" ")
    );
    ensure(within >= 3, detail.clone())?;
    Ok(detail)
}

/// Share of consecutive 20-iteration moving-average windows over the first
/// 100 iterations where the average training reward does not decrease.
fn non_decreasing_share(returns: &[f64]) -> f64 {
    let head = &returns[..returns.len().min(100)];
    let ma: Vec<f64> = head
        .windows(MA_WINDOW)
        .map(|w| w.iter().sum::<f64>() / MA_WINDOW as f64)
        .collect();
    let steps = ma.len().saturating_sub(1);
    let up = ma.windows(2).filter(|p| p[1] >= p[0]).count();
    up as f64 / steps as f64
}

fn criterion_10(w: &ToyWorld) -> Outcome {
    let shares: Vec<f64> = w.runs.iter().map(|r| non_decreasing_share(&r.returns)).collect();
    let passing = shares.iter().filter(|&&s| s >= 0.8).count();
    let shown: Vec<String> = shares.iter().map(|s| format!("{:.3}", s)).collect();
    let detail = format!("{passing}/5 seeds with >= 80% non-decreasing windows [{}]", shown.join(" "));
    ensure(passing * 2 > TOY_SEEDS.len(), detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 11. Bandit convergence

fn criterion_11() -> Outcome {
    let arms = 5;
    let best = 3;
    let mut agent = MabtsAgent::new(arms, MabtsConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let pulls = 10_000;
    let mut hits = 0;
    for k in 0..pulls {
        let (arm, _) = agent.posterior().select(&mut rng);
        let mean = if arm == best { 1.0 } else { 2.0 };
        agent.record(arm, mean + noise.sample(&mut rng)).map_err(|e| e.to_string())?;
        if k >= pulls - 1000 && arm == best {
            hits += 1;
        }
    }
    let share = hits as f64 / 1000.0;
    let detail = format!("best arm in {:.1}% of the last 1000 of {pulls} pulls", 100.0 * share);
    ensure(share >= 0.9, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 12. Workload calibration

fn criterion_12() -> Outcome {
    let cfg = EnvConfig::default();
    let c = checks::workload_calibration_stats();
    ensure(
        (c.mean_user_tasks - 2.0).abs() <= 0.02,
        format!("mean task count {}", c.mean_user_tasks),
    )?;
    let mu = (cfg.data_range_bits[0] + cfg.data_range_bits[1]) / 2.0
        * (cfg.kappa_range_cycles_per_bit[0] + cfg.kappa_range_cycles_per_bit[1])
        / 2.0;
    let rel = (c.mean_server_load - 10.0 * mu) / (10.0 * mu);
    ensure(rel.abs() <= 0.03, format!("mean load off by {:.2}%", 100.0 * rel))?;
    let inside = |[a, b]: [f64; 2], [lo, hi]: [f64; 2]| lo <= a && b <= hi;
    ensure(inside(c.data_range_seen, cfg.data_range_bits), "task size outside range")?;
    ensure(
        inside(c.kappa_range_seen, cfg.kappa_range_cycles_per_bit),
        "density outside range",
    )?;
    let spread = |[a, b]: [f64; 2], [lo, hi]: [f64; 2]| (a - lo) / (hi - lo) < 0.01 && (hi - b) / (hi - lo) < 0.01;
    ensure(
        spread(c.data_range_seen, cfg.data_range_bits) && spread(c.kappa_range_seen, cfg.kappa_range_cycles_per_bit),
        "samples do not span the uniform ranges",
    )?;
    Ok(format!(
        "tasks/slot {:.4} (2 +- 0.02), load {:+.2}% of 10mu (+-3%), sizes/densities span their ranges",
        c.mean_user_tasks,
        100.0 * rel
    ))
}

// ---------------------------------------------------------------------------

fn report(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let passed = outcome.is_ok() && in_time;
    let detail = match &outcome {
        Ok(d) | Err(d) => d.clone(),
    };
    println!(
        "criterion {n:>2} {} {name}: {detail} [{:.2}s{}]",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        if in_time {
            String::new()
        } else {
            format!(", over the {}s budget", budget.as_secs())
        }
    );
    passed
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        report(1, "cost-model unit suite", secs(1), criterion_1),
        report(2, "optimum equals exhaustive search", secs(30), criterion_2),
        report(3, "optimum dominance", secs(120), criterion_3),
        report(4, "gradient suite", secs(60), criterion_4),
        report(5, "advantage identities", secs(1), criterion_5),
        report(6, "clipped-surrogate identities", secs(1), criterion_6),
        report(7, "determinism", secs(60), criterion_7),
    ];
    let toy_start = Instant::now();
    let toy = catch_unwind(toy_world);
    let toy_budget = secs(15 * 60);
    match &toy {
        Ok(w) => {
            // The shared training time counts against criterion 8's budget.
            let left = toy_budget.saturating_sub(toy_start.elapsed());
            results.push(report(8, "training smoke test", left, || criterion_8(w)));
            results.push(report(9, "optimality gap", secs(1), || criterion_9(w)));
            results.push(report(10, "learning signal", secs(1), || criterion_10(w)));
        }
        Err(_) => {
            for (n, name) in [(8, "training smoke test"), (9, "optimality gap"), (10, "learning signal")] {
                results.push(report(n, name, secs(1), || Err("toy-world training panicked".into())));
            }
        }
    }
    results.push(report(11, "bandit convergence", secs(10), criterion_11));
    results.push(report(12, "workload calibration", secs(10), criterion_12));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
