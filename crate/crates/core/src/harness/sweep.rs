use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::run_config;
use crate::domain::ExecMode;
use crate::error::{Error, Result};
use crate::metrics::{self, GpuBreakdown, RunSummary, SUMMARY_HEADER};
use crate::rng::derive_seed;
use crate::scheduler::StrategyKind;
use crate::traffic::Pattern;

pub const SWEEP_SUMMARY_CSV: &str = "sweep_summary.csv";
pub const SWEEP_STATUS_CSV: &str = "sweep_status.csv";

/// One point of a sweep grid. `seed` is the replicate index from the grid;
/// [`Cell::run_seed`] is what the simulation actually uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub base_seed: u64,
    pub strategy: StrategyKind,
    pub pattern: Pattern,
    pub mean_rps: f64,
    pub sla_s: f64,
    pub mode: ExecMode,
    pub seed: u64,
}

impl Cell {
    /// Seed shared by every strategy, SLA and mode at the same pattern, mean
    /// and replicate, so those cells replay identical arrivals and costs.
    pub fn run_seed(&self) -> u64 {
        derive_seed(
            self.base_seed,
            &format!("{}/{}/{}", self.pattern, self.mean_rps, self.seed),
        )
    }

    fn sort_key(&self) -> (StrategyKind, Pattern, f64, f64, ExecMode, u64) {
        (
            self.strategy,
            self.pattern,
            self.mean_rps,
            self.sla_s,
            self.mode,
            self.seed,
        )
    }

    fn cmp_key(&self, other: &Cell) -> Ordering {
        let (a, b) = (self.sort_key(), other.sort_key());
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.total_cmp(&b.3))
            .then(a.4.cmp(&b.4))
            .then(a.5.cmp(&b.5))
    }
}

/// Directory name of a cell's outputs; derivable from a summary row.
pub fn cell_dir_name(
    strategy: StrategyKind,
    pattern: Pattern,
    mean_rps: f64,
    sla_s: f64,
    mode: ExecMode,
    run_seed: u64,
) -> String {
    format!("{strategy}__{pattern}__m{mean_rps}__sla{sla_s}__{mode}__seed{run_seed}")
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: std::result::Result<CellStats, String>,
}

/// What a sweep keeps in memory per cell; the full records go to disk.
#[derive(Debug, Clone)]
pub struct CellStats {
    pub summary: RunSummary,
    pub breakdown: GpuBreakdown,
    pub mean_latency_s: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Sorted by cell key.
    pub cells: Vec<CellOutcome>,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    pub fn summaries(&self) -> impl Iterator<Item = (&Cell, &CellStats)> {
        self.cells
            .iter()
            .filter_map(|c| c.result.as_ref().ok().map(|s| (&c.cell, s)))
    }
}

pub(super) fn expand(cfg: &RunConfig) -> Vec<Cell> {
    let grid = cfg.grid.clone().unwrap_or_default();
    let mut cells = Vec::new();
    for &strategy in &grid.strategies {
        for &pattern in &grid.patterns {
            for &mean_rps in &grid.means {
                for &sla_s in &grid.slas {
                    for &mode in &grid.modes {
                        for &seed in &grid.seeds {
                            cells.push(Cell {
                                base_seed: cfg.seed,
                                strategy,
                                pattern,
                                mean_rps,
                                sla_s,
                                mode,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    cells.sort_by(Cell::cmp_key);
    cells.dedup_by(|a, b| a.cmp_key(b) == Ordering::Equal);
    cells
}

fn cell_config(base: &RunConfig, cell: &Cell) -> RunConfig {
    let mut cfg = base.clone();
    cfg.strategy = cell.strategy;
    cfg.traffic.pattern = cell.pattern;
    cfg.traffic.mean_rps = cell.mean_rps;
    cfg.sla_s = cell.sla_s;
    cfg.mode = cell.mode;
    cfg.seed = cell.run_seed();
    cfg.grid = None;
    cfg
}

fn run_cell(base: &RunConfig, cell: &Cell, out_dir: Option<&Path>) -> Result<CellStats> {
    let cfg = cell_config(base, cell);
    let report = match out_dir {
        Some(dir) => {
            let name = cell_dir_name(
                cell.strategy,
                cell.pattern,
                cell.mean_rps,
                cell.sla_s,
                cell.mode,
                cfg.seed,
            );
            super::simulate(&cfg, &dir.join("cells").join(name))?
        }
        None => {
            let cm = cfg.load_cost_model()?;
            run_config(&cfg, &cm, cfg.seed)?
        }
    };
    Ok(CellStats {
        mean_latency_s: metrics::mean_latency(&report.requests),
        summary: report.summary,
        breakdown: report.breakdown,
        warnings: report.warnings,
    })
}

#[derive(Serialize)]
struct StatusRow<'a> {
    cell: String,
    status: &'a str,
    message: String,
}

/// Runs every grid cell on a pool of `jobs` threads. With `out_dir`, each
/// cell writes its CSVs under `out_dir/cells/` and the sweep writes a sorted
/// summary and a per-cell status file. Failing cells are reported, not fatal.
pub fn run_sweep(cfg: &RunConfig, out_dir: Option<&Path>, jobs: usize) -> Result<SweepOutcome> {
    // Fail early on config problems shared by all cells.
    cfg.load_cost_model()?;
    cfg.strategy()?;
    let cells = expand(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| CellOutcome {
                cell: *cell,
                result: run_cell(cfg, cell, out_dir).map_err(|e| e.to_string()),
            })
            .collect()
    });
    if let Some(dir) = out_dir {
        write_sweep_files(&outcomes, dir)?;
    }
    Ok(SweepOutcome { cells: outcomes })
}

fn write_sweep_files(outcomes: &[CellOutcome], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::output(dir, e))?;
    let summaries: Vec<&RunSummary> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|s| &s.summary))
        .collect();
    let bytes = metrics::to_csv_bytes(&SUMMARY_HEADER, &summaries)?;
    let path = dir.join(SWEEP_SUMMARY_CSV);
    fs::write(&path, bytes).map_err(|e| Error::output(&path, e))?;

    let status: Vec<StatusRow> = outcomes
        .iter()
        .map(|o| {
            let c = &o.cell;
            let cell = cell_dir_name(c.strategy, c.pattern, c.mean_rps, c.sla_s, c.mode, c.run_seed());
            match &o.result {
                Ok(s) => StatusRow {
                    cell,
                    status: "ok",
                    message: s.warnings.join("; "),
                },
                Err(e) => StatusRow {
                    cell,
                    status: "failed",
                    message: e.clone(),
                },
            }
        })
        .collect();
    let bytes = metrics::to_csv_bytes(&["cell", "status", "message"], &status)?;
    let path = dir.join(SWEEP_STATUS_CSV);
    fs::write(&path, bytes).map_err(|e| Error::output(&path, e))
}
