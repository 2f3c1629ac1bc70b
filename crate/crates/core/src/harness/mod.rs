//! Experiment driver: single runs, grid sweeps, traffic export, OBS tables
//! and CC/No-CC comparisons. The CLI is a thin layer over these functions.

mod compare;
mod config;
mod sweep;

use std::fs;
use std::path::Path;

pub use compare::{compare_dirs, ComparisonRow, COMPARISON_CSV};
pub use config::{GridConfig, RunConfig, StrategyParams, TrafficConfig};
pub use sweep::{
    cell_dir_name, run_sweep, Cell, CellOutcome, CellStats, SweepOutcome, SWEEP_STATUS_CSV, SWEEP_SUMMARY_CSV,
};

use crate::engine;
use crate::error::{Error, Result};
use crate::metrics::{self, RunReport};
use crate::profiles::CostModel;
use crate::traffic::{ArrivalTrace, TrafficSpec};

pub const CONFIG_ECHO: &str = "config.json";

/// Runs the cell described by `cfg` with the given seed, in memory.
pub fn run_config(cfg: &RunConfig, cost_model: &CostModel, seed: u64) -> Result<RunReport> {
    let trace = cfg.arrival_trace(cost_model, seed)?;
    let params = cfg.sim_params(seed)?;
    let out = engine::run(&trace, cost_model, &params)?;
    Ok(metrics::summarize(&out, &cfg.meta(seed)?))
}

/// Runs one cell end to end and writes its CSVs plus an echo of the
/// effective config into `out_dir`.
pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    let cost_model = cfg.load_cost_model()?;
    let report = run_config(cfg, &cost_model, cfg.seed)?;
    metrics::write_outputs(&report, out_dir)?;
    let mut echo = cfg.clone();
    echo.grid = None;
    for p in [Some(&mut echo.cost_model), echo.trace.as_mut()].into_iter().flatten() {
        if let Ok(abs) = fs::canonicalize(&*p) {
            *p = abs;
        }
    }
    let path = out_dir.join(CONFIG_ECHO);
    fs::write(&path, echo.to_json()).map_err(|e| Error::output(&path, e))?;
    Ok(report)
}

/// Generates a trace, writes it as CSV and returns it.
pub fn gen_traffic(spec: &TrafficSpec, seed: u64, out: &Path) -> Result<ArrivalTrace> {
    let trace = spec.generate(seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::output(parent, e))?;
    }
    trace.write_csv(out)?;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsRow {
    pub model: String,
    pub obs: u32,
    pub max_batch: u32,
    pub peak_rps: f64,
}

/// Optimal batch size and peak throughput per model, in file order.
pub fn obs_table(cost_model: &CostModel) -> Vec<ObsRow> {
    cost_model
        .models()
        .iter()
        .map(|m| ObsRow {
            model: m.id.to_string(),
            obs: m.curve.obs(),
            max_batch: m.curve.max_batch(),
            peak_rps: m.curve.peak_throughput(),
        })
        .collect()
}
