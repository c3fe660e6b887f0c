//! Long-format export of comparison tables for external plotting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{write_csv, ComparisonRecord};
use super::HarnessError;

/// Metrics exported when the caller names none.
pub const DEFAULT_PLOT_METRICS: [&str; 7] = [
    "mean_latency_s",
    "std_latency_s",
    "migration_s",
    "computation_s",
    "access_s",
    "backhaul_s",
    "optimality_gap",
];

const PLOT_HEADER: [&str; 5] = ["sweep_axis", "sweep_value", "agent", "metric", "value"];

/// One `(sweep value, agent, metric)` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub sweep_axis: Option<String>,
    pub sweep_value: Option<f64>,
    pub agent: String,
    pub metric: String,
    pub value: Option<f64>,
}

fn metric_of(r: &ComparisonRecord, name: &str) -> Result<Option<f64>, HarnessError> {
    Ok(match name {
        "mean_latency_s" => Some(r.mean_latency_s),
        "std_latency_s" => Some(r.std_latency_s),
        "migration_s" => Some(r.migration_s),
        "computation_s" => Some(r.computation_s),
        "access_s" => Some(r.access_s),
        "backhaul_s" => Some(r.backhaul_s),
        "optimality_gap" => r.optimality_gap,
        "episodes" => Some(r.episodes as f64),
        other => return Err(HarnessError::MissingMetrics(format!("no metric named {other:?}"))),
    })
}

/// Turns a comparison CSV into one row per `(sweep value, agent, metric)`,
/// in input-row order and then `metrics` order. Returns the rows written.
pub fn export_plot_data(comparison_csv: &Path, out: &Path, metrics: &[&str]) -> Result<Vec<PlotRow>, HarnessError> {
    let metrics: Vec<&str> = if metrics.is_empty() {
        DEFAULT_PLOT_METRICS.to_vec()
    } else {
        metrics.to_vec()
    };
    if !comparison_csv.exists() {
        return Err(HarnessError::MissingMetrics(format!(
            "{} does not exist",
            comparison_csv.display()
        )));
    }
    let mut rdr = csv::Reader::from_path(comparison_csv)?;
    let records: Vec<ComparisonRecord> = rdr.deserialize().collect::<Result<_, _>>()?;
    if records.is_empty() {
        return Err(HarnessError::MissingMetrics(format!(
            "{} has no rows",
            comparison_csv.display()
        )));
    }
    let mut rows = Vec::with_capacity(records.len() * metrics.len());
    for r in &records {
        for &m in &metrics {
            rows.push(PlotRow {
                sweep_axis: r.sweep_axis.clone(),
                sweep_value: r.sweep_value,
                agent: r.agent.clone(),
                metric: m.to_string(),
                value: metric_of(r, m)?,
            });
        }
    }
    write_csv(out, &PLOT_HEADER, &rows)?;
    Ok(rows)
}
