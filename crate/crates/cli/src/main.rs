//! Command-line driver: ingest traces, train, evaluate, sweep, and self-check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use migrate_core::agents::AgentKind;
use migrate_core::harness::{
    self, checks, export_plot_data, ExperimentConfig, GridChoice, HarnessError, Sweep, SweepAxis, TraceFormat,
    COMPARISON_CSV, INGEST_REPORT_JSON,
};
use migrate_core::traces::save_slot_traces;

#[derive(Debug, Parser)]
#[command(name = "migrate-lab", version, about = "Edge service-migration experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated agents, e.g. NM,AM,MABTS,DQLM,OPTIM,DRACM.
    #[arg(long, global = true, value_delimiter = ',')]
    agents: Option<Vec<String>>,
    /// Server grid.
    #[arg(long, global = true, value_parser = ["rome", "sf", "synthetic"])]
    grid: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raw GPS dump -> canonical slot-trace CSV and an ingestion report.
    Ingest {
        /// Raw trace file.
        #[arg(long)]
        input: PathBuf,
        /// Layout of the input file.
        #[arg(long, value_parser = ["rome", "sf", "id_lat_lon_ts", "slots"], default_value = "id_lat_lon_ts")]
        format: String,
        /// Minimum trace length in slots (defaults to the horizon).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Train the learning agents in the roster (DRACM, DQLM).
    Train,
    /// Train as needed and write the agent comparison table.
    Eval,
    /// Run the comparison at every value of one environment axis.
    Sweep {
        /// Axis to vary; defaults to the config's sweep.
        #[arg(long, value_parser = ["user_rate", "kappa_midpoint", "mc"])]
        axis: Option<String>,
        /// Comma-separated axis values; defaults to the axis's standard set.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run the oracle, gradient and calibration self-checks.
    Check,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match (&common.config, common.seed) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(seed)) => ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        },
        (None, None) => {
            return Err(HarnessError::ConfigInvalid(
                "give a seed with --seed or in the --config file".into(),
            ))
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(list) = &common.agents {
        cfg.agents = list
            .iter()
            .map(|s| s.parse::<AgentKind>().map_err(HarnessError::ConfigInvalid))
            .collect::<Result<_, _>>()?;
    }
    if let Some(grid) = &common.grid {
        cfg.grid = grid.parse::<GridChoice>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn say(msg: &str) {
    eprintln!("{msg}");
}

fn write_plot(out: &Path) -> Result<(), HarnessError> {
    let rows = export_plot_data(&out.join(COMPARISON_CSV), &out.join("plot.csv"), &[])?;
    say(&format!("wrote {} plot rows to {}", rows.len(), out.join("plot.csv").display()));
    Ok(())
}

fn ingest(common: &Common, input: &Path, format: &str, horizon: Option<usize>) -> Result<(), HarnessError> {
    let grid = match &common.grid {
        Some(g) => g.parse::<GridChoice>()?,
        None => GridChoice::Rome,
    };
    let cfg = ExperimentConfig {
        grid,
        ..ExperimentConfig::default()
    };
    let format: TraceFormat = serde_json::from_value(serde_json::Value::String(format.to_string()))?;
    let horizon = horizon.unwrap_or(cfg.env.horizon_slots);
    let (traces, report) = harness::ingest_file(input, format, &cfg.grid_spec(), horizon)?;
    std::fs::create_dir_all(&common.out)?;
    let csv_path = common.out.join("traces.csv");
    save_slot_traces(&csv_path, &traces)?;
    std::fs::write(
        common.out.join(INGEST_REPORT_JSON),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    say(&format!(
        "{} fixes ({} malformed lines) from {} vehicles -> {} traces in {}",
        report.fixes,
        report.malformed_lines,
        report.vehicles,
        report.traces,
        csv_path.display()
    ));
    Ok(())
}

fn check() -> Result<(), HarnessError> {
    let outcomes = checks::run_checks();
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed: Vec<String> = outcomes.into_iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::CheckFailed(failed))
    }
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    let common = &cli.common;
    match &cli.command {
        Command::Ingest { input, format, horizon } => ingest(common, input, format, *horizon),
        Command::Check => check(),
        Command::Train => {
            let cfg = load_config(common)?;
            let art = harness::train(&cfg, &common.out, &mut say)?;
            say(&format!(
                "wrote {} metric rows and {} checkpoints under {}",
                art.metrics.len(),
                art.checkpoints.len(),
                art.out_dir.display()
            ));
            Ok(())
        }
        Command::Eval => {
            let mut cfg = load_config(common)?;
            cfg.sweep = None;
            harness::run_with(&cfg, &common.out, &mut say)?;
            write_plot(&common.out)
        }
        Command::Sweep { axis, values } => {
            let mut cfg = load_config(common)?;
            let axis = match (axis, &cfg.sweep) {
                (Some(a), _) => a.parse::<SweepAxis>()?,
                (None, Some(s)) => s.axis,
                (None, None) => {
                    return Err(HarnessError::ConfigInvalid(
                        "sweep needs --axis or a sweep_* key in the config".into(),
                    ))
                }
            };
            let values = match values {
                Some(v) => v.clone(),
                None => match &cfg.sweep {
                    Some(s) if s.axis == axis => s.values.clone(),
                    _ => axis.default_values(),
                },
            };
            cfg.sweep = Some(Sweep { axis, values });
            cfg.validate()?;
            harness::run_with(&cfg, &common.out, &mut say)?;
            write_plot(&common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::from(harness::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
