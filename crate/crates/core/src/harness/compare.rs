use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweep::{cell_dir_name, SWEEP_SUMMARY_CSV};
use crate::domain::ExecMode;
use crate::error::{Error, Result};
use crate::metrics::{self, RequestRecord, RunSummary, REQUESTS_CSV, SUMMARY_CSV};

pub const COMPARISON_CSV: &str = "comparison.csv";

/// Relative CC vs No-CC differences for one matched cell. Percent gaps are
/// relative to the CC value; attainment is in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub pattern: String,
    pub mean_rps: f64,
    pub sla_s: String,
    pub seed: u64,
    #[serde(serialize_with = "fmt2")]
    pub latency_gap_pct: f64,
    #[serde(serialize_with = "fmt2")]
    pub attainment_gap_pp: f64,
    #[serde(serialize_with = "fmt2")]
    pub throughput_gap_pct: f64,
    #[serde(serialize_with = "fmt2")]
    pub util_gap_pct: f64,
}

fn fmt2<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{v:.2}"))
}

const HEADER: [&str; 9] = [
    "strategy",
    "pattern",
    "mean_rps",
    "sla_s",
    "seed",
    "latency_gap_pct",
    "attainment_gap_pp",
    "throughput_gap_pct",
    "util_gap_pct",
];

type Key = (String, String, String, String, u64);

struct Side {
    summary: RunSummary,
    mean_latency: f64,
}

fn key(s: &RunSummary) -> Key {
    (
        s.strategy.to_string(),
        s.pattern.to_string(),
        s.mean_rps.to_string(),
        s.sla_s.to_string(),
        s.seed,
    )
}

/// Summary rows of a run or sweep directory with the given mode, each
/// paired with the directory holding that run's `requests.csv`.
fn load_side(dir: &Path, mode: ExecMode) -> Result<BTreeMap<Key, Side>> {
    let sweep = dir.join(SWEEP_SUMMARY_CSV);
    let (rows, is_sweep): (Vec<RunSummary>, bool) = if sweep.exists() {
        (metrics::read_csv(&sweep)?, true)
    } else {
        let single = dir.join(SUMMARY_CSV);
        if !single.exists() {
            return Err(Error::input(
                dir,
                format!("neither {SWEEP_SUMMARY_CSV} nor {SUMMARY_CSV} found"),
            ));
        }
        (metrics::read_csv(&single)?, false)
    };
    let mut out = BTreeMap::new();
    for s in rows.into_iter().filter(|s| s.mode == mode) {
        let cell_dir: PathBuf = if is_sweep {
            let name = cell_dir_name(s.strategy, s.pattern, s.mean_rps, s.sla_s.as_secs_f64(), s.mode, s.seed);
            dir.join("cells").join(name)
        } else {
            dir.to_path_buf()
        };
        let requests: Vec<RequestRecord> = metrics::read_csv(&cell_dir.join(REQUESTS_CSV))?;
        let mean_latency = metrics::mean_latency(&requests).unwrap_or(0.0);
        let k = key(&s);
        if out
            .insert(
                k.clone(),
                Side {
                    summary: s,
                    mean_latency,
                },
            )
            .is_some()
        {
            return Err(Error::input(dir, format!("duplicate cell {k:?}")));
        }
    }
    if out.is_empty() {
        return Err(Error::input(dir, format!("no {mode} cells found")));
    }
    Ok(out)
}

fn rel_gap(base: f64, other: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (other - base) / base * 100.0
    }
}

/// Pairs CC cells from `cc_dir` with No-CC cells from `nocc_dir` (the same
/// directory may hold both) and writes `comparison.csv` into `out_dir`.
pub fn compare_dirs(cc_dir: &Path, nocc_dir: &Path, out_dir: &Path) -> Result<Vec<ComparisonRow>> {
    let cc = load_side(cc_dir, ExecMode::Cc)?;
    let nocc = load_side(nocc_dir, ExecMode::NoCc)?;
    if let Some(k) = cc.keys().find(|k| !nocc.contains_key(*k)) {
        return Err(Error::input(nocc_dir, format!("no No-CC cell matches {k:?}")));
    }
    if let Some(k) = nocc.keys().find(|k| !cc.contains_key(*k)) {
        return Err(Error::input(cc_dir, format!("no CC cell matches {k:?}")));
    }
    let rows: Vec<ComparisonRow> = cc
        .iter()
        .map(|(k, c)| {
            let n = &nocc[k];
            ComparisonRow {
                strategy: k.0.clone(),
                pattern: k.1.clone(),
                mean_rps: c.summary.mean_rps,
                sla_s: k.3.clone(),
                seed: k.4,
                latency_gap_pct: -rel_gap(c.mean_latency, n.mean_latency),
                attainment_gap_pp: n.summary.attainment_pct - c.summary.attainment_pct,
                throughput_gap_pct: rel_gap(c.summary.overall_throughput_rps, n.summary.overall_throughput_rps),
                util_gap_pct: rel_gap(c.summary.gpu_util_pct, n.summary.gpu_util_pct),
            }
        })
        .collect();
    fs::create_dir_all(out_dir).map_err(|e| Error::output(out_dir, e))?;
    let path = out_dir.join(COMPARISON_CSV);
    fs::write(&path, metrics::to_csv_bytes(&HEADER, &rows)?).map_err(|e| Error::output(&path, e))?;
    Ok(rows)
}
