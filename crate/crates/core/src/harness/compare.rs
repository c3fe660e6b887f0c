//! Scoring several agents on exactly the same episodes.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::{run_episode, Agent};
use crate::env::{CostBreakdown, Env, EnvConfig};
use crate::topology::GridSpec;
use crate::traces::SlotTrace;

/// One agent's line in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub agent: String,
    pub episodes: usize,
    /// Mean total latency over the horizon, seconds.
    pub mean_latency_s: f64,
    pub std_latency_s: f64,
    pub migration_s: f64,
    pub computation_s: f64,
    pub access_s: f64,
    pub backhaul_s: f64,
    /// `(agent − OPTIM) / OPTIM`; absent when OPTIM is not in the roster.
    pub optimality_gap: Option<f64>,
}

struct Tally {
    totals: Vec<f64>,
    breakdown: CostBreakdown,
}

/// Plays every agent on every `(trace, seed)` episode and summarizes.
///
/// Episodes are visited in trace-major order and, within an episode, in
/// roster order, so agents that learn online (MABTS) see a reproducible
/// stream. Every agent's episode must hash to the same exogenous digest.
/// Rows come back sorted by mean latency, ties by agent name.
pub fn compare_agents(
    roster: &mut [Box<dyn Agent>],
    env_cfg: &EnvConfig,
    grid: &GridSpec,
    traces: &[SlotTrace],
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>, HarnessError> {
    if traces.is_empty() || seeds.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let mut env = Env::new(env_cfg.clone(), grid.clone())?;
    let mut tallies: Vec<Tally> = roster
        .iter()
        .map(|_| Tally {
            totals: Vec::with_capacity(traces.len() * seeds.len()),
            breakdown: CostBreakdown::default(),
        })
        .collect();
    for trace in traces {
        for &seed in seeds {
            let mut digest: Option<String> = None;
            for (agent, tally) in roster.iter_mut().zip(&mut tallies) {
                let result = run_episode(&mut env, agent.as_mut(), trace, seed)?;
                match &digest {
                    None => digest = Some(result.digest.clone()),
                    Some(d) if *d != result.digest => {
                        return Err(HarnessError::UnsharedEpisode {
                            trace: trace.id.clone(),
                            seed,
                        })
                    }
                    Some(_) => {}
                }
                tally.totals.push(result.total);
                tally.breakdown.accumulate(&result.breakdown);
            }
        }
    }
    let optim_mean = roster
        .iter()
        .zip(&tallies)
        .find(|(a, _)| a.name() == "OPTIM")
        .map(|(_, t)| mean(&t.totals));
    let mut rows: Vec<ComparisonRow> = roster
        .iter()
        .zip(&tallies)
        .map(|(agent, tally)| {
            let n = tally.totals.len() as f64;
            let m = mean(&tally.totals);
            let var = tally.totals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            let b = tally.breakdown.scaled(1.0 / n);
            ComparisonRow {
                agent: agent.name().to_string(),
                episodes: tally.totals.len(),
                mean_latency_s: m,
                std_latency_s: var.sqrt(),
                migration_s: b.migration,
                computation_s: b.computation,
                access_s: b.access,
                backhaul_s: b.backhaul,
                optimality_gap: optim_mean.map(|o| gap(m, o)),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.mean_latency_s
            .total_cmp(&b.mean_latency_s)
            .then_with(|| a.agent.cmp(&b.agent))
    });
    Ok(rows)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn gap(value: f64, optimum: f64) -> f64 {
    if value == optimum {
        0.0
    } else if optimum == 0.0 {
        f64::INFINITY
    } else {
        (value - optimum) / optimum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AlwaysMigrate, MabtsAgent, MabtsConfig, NeverMigrate, OptimAgent};
    use crate::traces::synth_trace;

    fn world() -> (GridSpec, EnvConfig, Vec<SlotTrace>) {
        let grid = GridSpec::synthetic(3, 3);
        let cfg = EnvConfig {
            horizon_slots: 15,
            ..EnvConfig::default()
        };
        let traces = (0..3).map(|s| synth_trace(s, &grid, 15, [0.5, 1.5]).unwrap()).collect();
        (grid, cfg, traces)
    }

    fn roster() -> Vec<Box<dyn Agent>> {
        vec![
            Box::new(NeverMigrate::new()),
            Box::new(AlwaysMigrate),
            Box::new(MabtsAgent::new(9, MabtsConfig::default())),
            Box::new(OptimAgent::new()),
        ]
    }

    #[test]
    fn optim_row_has_zero_gap_and_others_are_nonnegative() {
        let (grid, cfg, traces) = world();
        let rows = compare_agents(&mut roster(), &cfg, &grid, &traces, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].agent, "OPTIM");
        assert_eq!(rows[0].optimality_gap, Some(0.0));
        assert!(rows.iter().all(|r| r.optimality_gap.unwrap() >= 0.0 && r.episodes == 6));
        assert!(rows.windows(2).all(|w| w[0].mean_latency_s <= w[1].mean_latency_s));
    }

    #[test]
    fn static_user_makes_nm_am_optim_equal() {
        // With unequal background loads a far, idle server can beat the local
        // one even for a parked user, so the servers carry no load here.
        let (grid, cfg, _) = world();
        let cfg = EnvConfig {
            server_rate_range_tasks_per_slot: [0.0, 0.0],
            ..cfg
        };
        let still = SlotTrace {
            id: "still".into(),
            slots: vec![(0.0045, 0.0045); 15],
            slot_seconds: 180.0,
        };
        let mut agents: Vec<Box<dyn Agent>> = vec![
            Box::new(NeverMigrate::new()),
            Box::new(AlwaysMigrate),
            Box::new(OptimAgent::new()),
        ];
        let rows = compare_agents(&mut agents, &cfg, &grid, &[still], &[3, 4, 5]).unwrap();
        assert!(rows.iter().all(|r| r.mean_latency_s == rows[0].mean_latency_s));
        assert!(rows.iter().all(|r| r.optimality_gap == Some(0.0)));
    }

    #[test]
    fn removing_an_agent_removes_exactly_its_row() {
        let (grid, cfg, traces) = world();
        let full = compare_agents(&mut roster(), &cfg, &grid, &traces, &[1]).unwrap();
        let mut fewer: Vec<Box<dyn Agent>> = vec![Box::new(NeverMigrate::new()), Box::new(OptimAgent::new())];
        let rows = compare_agents(&mut fewer, &cfg, &grid, &traces, &[1]).unwrap();
        let kept: Vec<_> = full.into_iter().filter(|r| r.agent == "NM" || r.agent == "OPTIM").collect();
        assert_eq!(rows, kept);
    }

    #[test]
    fn gap_is_absent_without_optim() {
        let (grid, cfg, traces) = world();
        let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(NeverMigrate::new())];
        let rows = compare_agents(&mut agents, &cfg, &grid, &traces, &[1]).unwrap();
        assert_eq!(rows[0].optimality_gap, None);
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let (grid, cfg, traces) = world();
        assert!(matches!(
            compare_agents(&mut roster(), &cfg, &grid, &[], &[1]),
            Err(HarnessError::EmptyTestSet)
        ));
        assert!(matches!(
            compare_agents(&mut roster(), &cfg, &grid, &traces, &[]),
            Err(HarnessError::EmptyTestSet)
        ));
    }
}
