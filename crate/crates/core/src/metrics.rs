//! Run metrics and the CSV outputs.
//!
//! Each run writes four files with fixed column orders:
//!
//! * `requests.csv`: one row per request, sorted by arrival.
//! * `batches.csv`: one row per batch, sorted by inference start.
//! * `timeline.csv`: the GPU interval partition.
//! * `summary.csv`: one [`RunSummary`] row.
//!
//! Times are seconds with six decimals, percentages have two.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::domain::{ExecMode, ModelId, SlaPolicy, TimePoint, TimeSpan};
use crate::engine::{Batch, IntervalKind, RunOutput, Timeline};
use crate::error::{Error, Result};
use crate::scheduler::StrategyKind;
use crate::traffic::Pattern;

pub const REQUESTS_CSV: &str = "requests.csv";
pub const BATCHES_CSV: &str = "batches.csv";
pub const TIMELINE_CSV: &str = "timeline.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

fn fmt6<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{v:.6}"))
}

fn fmt2<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{v:.2}"))
}

/// Shortest round-tripping form, so `4.0` is written as `4`.
fn shortest<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub model: ModelId,
    pub arrival_s: TimePoint,
    pub dispatch_s: Option<TimePoint>,
    pub completion_s: Option<TimePoint>,
    pub batch_id: Option<u64>,
    pub batch_size: Option<u32>,
    pub latency_s: Option<TimeSpan>,
    pub sla_met: bool,
    pub fulfilled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_id: u64,
    pub model: ModelId,
    pub size: u32,
    pub swap_incurred: bool,
    pub load_s: TimeSpan,
    pub start_s: TimePoint,
    pub end_s: TimePoint,
    pub processing_s: TimeSpan,
    #[serde(serialize_with = "fmt6")]
    pub inference_throughput_rps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub start_s: TimePoint,
    pub end_s: TimePoint,
    pub kind: String,
    pub model: Option<ModelId>,
}

/// Identity of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMeta {
    pub strategy: StrategyKind,
    pub pattern: Pattern,
    pub mean_rps: f64,
    pub sla: SlaPolicy,
    pub mode: ExecMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: StrategyKind,
    pub pattern: Pattern,
    #[serde(serialize_with = "shortest")]
    pub mean_rps: f64,
    pub sla_s: TimeSpan,
    pub mode: ExecMode,
    pub total_requests: u64,
    pub fulfilled: u64,
    #[serde(serialize_with = "fmt2")]
    pub attainment_pct: f64,
    #[serde(serialize_with = "fmt6")]
    pub overall_throughput_rps: f64,
    #[serde(serialize_with = "fmt6")]
    pub inference_rate_rps: f64,
    #[serde(serialize_with = "fmt2")]
    pub gpu_util_pct: f64,
    #[serde(serialize_with = "fmt2")]
    pub load_pct: f64,
    #[serde(serialize_with = "fmt2")]
    pub unload_pct: f64,
    #[serde(serialize_with = "fmt2")]
    pub idle_pct: f64,
    pub swap_count: u32,
    pub runtime_s: TimeSpan,
    pub seed: u64,
}

/// Share of runtime per GPU activity, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuBreakdown {
    pub infer_pct: f64,
    pub load_pct: f64,
    pub unload_pct: f64,
    pub idle_pct: f64,
}

impl GpuBreakdown {
    pub fn total(&self) -> f64 {
        self.infer_pct + self.load_pct + self.unload_pct + self.idle_pct
    }

    /// Rounds to hundredths with the largest-remainder method so the four
    /// values still sum to exactly 100.00.
    pub fn rounded(&self) -> GpuBreakdown {
        let raw = [self.infer_pct, self.load_pct, self.unload_pct, self.idle_pct];
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return *self;
        }
        let scaled: Vec<f64> = raw.iter().map(|v| v * 10_000.0 / total).collect();
        let mut units: Vec<i64> = scaled.iter().map(|v| v.floor() as i64).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let missing = 10_000 - units.iter().sum::<i64>();
        for &i in order.iter().take(missing.max(0) as usize) {
            units[i] += 1;
        }
        GpuBreakdown {
            infer_pct: units[0] as f64 / 100.0,
            load_pct: units[1] as f64 / 100.0,
            unload_pct: units[2] as f64 / 100.0,
            idle_pct: units[3] as f64 / 100.0,
        }
    }
}

/// Per-request rows for a finished run.
pub fn request_records(out: &RunOutput, sla: SlaPolicy) -> Vec<RequestRecord> {
    out.requests
        .iter()
        .map(|r| {
            let size = r.batch_id.map(|b| out.batches[b as usize].size);
            RequestRecord {
                request_id: r.id,
                model: r.model.clone(),
                arrival_s: r.arrival,
                dispatch_s: r.dispatch,
                completion_s: r.completion,
                batch_id: r.batch_id,
                batch_size: size,
                latency_s: r.latency(),
                sla_met: r.meets_sla(sla),
                fulfilled: r.is_completed(),
            }
        })
        .collect()
}

pub fn batch_records(batches: &[Batch]) -> Vec<BatchRecord> {
    batches
        .iter()
        .map(|b| BatchRecord {
            batch_id: b.id,
            model: b.model.clone(),
            size: b.size,
            swap_incurred: b.swap_incurred,
            load_s: b.load,
            start_s: b.start,
            end_s: b.end,
            processing_s: b.processing(),
            inference_throughput_rps: f64::from(b.size) / b.processing().as_secs_f64(),
        })
        .collect()
}

pub fn timeline_records(timeline: &Timeline) -> Vec<TimelineRecord> {
    timeline
        .intervals()
        .iter()
        .map(|i| TimelineRecord {
            start_s: i.start,
            end_s: i.end,
            kind: i.kind.as_str().to_owned(),
            model: i.model.clone(),
        })
        .collect()
}

/// Percentage of all requests that completed within the SLA. Unfulfilled
/// requests count in the denominator. With no requests the result is 100%
/// and the returned flag is set.
pub fn attainment(records: &[RequestRecord], sla: SlaPolicy) -> (f64, bool) {
    if records.is_empty() {
        return (100.0, true);
    }
    let met = records
        .iter()
        .filter(|r| r.fulfilled && r.latency_s.is_some_and(|l| l <= sla.limit()))
        .count();
    (100.0 * met as f64 / records.len() as f64, false)
}

/// Completed requests per second of runtime.
pub fn overall_throughput(records: &[RequestRecord], runtime: TimeSpan) -> f64 {
    if runtime.is_zero() {
        return 0.0;
    }
    records.iter().filter(|r| r.fulfilled).count() as f64 / runtime.as_secs_f64()
}

/// Requests per second counted over inference time only.
pub fn inference_rate(batches: &[BatchRecord]) -> f64 {
    let size: u64 = batches.iter().map(|b| u64::from(b.size)).sum();
    let time: TimeSpan = batches.iter().map(|b| b.processing_s).sum();
    if time.is_zero() {
        return 0.0;
    }
    size as f64 / time.as_secs_f64()
}

pub fn gpu_breakdown(timeline: &Timeline) -> GpuBreakdown {
    timeline
        .check_partition()
        .expect("timeline intervals must partition the run");
    let runtime = timeline.end().saturating_since(timeline.start());
    if runtime.is_zero() {
        return GpuBreakdown {
            infer_pct: 0.0,
            load_pct: 0.0,
            unload_pct: 0.0,
            idle_pct: 100.0,
        };
    }
    let pct = |k| 100.0 * timeline.total(k).as_micros() as f64 / runtime.as_micros() as f64;
    GpuBreakdown {
        infer_pct: pct(IntervalKind::Infer),
        load_pct: pct(IntervalKind::Load),
        unload_pct: pct(IntervalKind::Unload),
        idle_pct: pct(IntervalKind::Idle),
    }
}

/// Mean latency over fulfilled requests, in seconds.
pub fn mean_latency(records: &[RequestRecord]) -> Option<f64> {
    let lat: Vec<u64> = records
        .iter()
        .filter_map(|r| r.latency_s.map(TimeSpan::as_micros))
        .collect();
    if lat.is_empty() {
        return None;
    }
    Some(lat.iter().sum::<u64>() as f64 / lat.len() as f64 / 1e6)
}

/// All artifacts of one run in their output form.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub requests: Vec<RequestRecord>,
    pub batches: Vec<BatchRecord>,
    pub timeline: Vec<TimelineRecord>,
    pub summary: RunSummary,
    pub breakdown: GpuBreakdown,
    pub warnings: Vec<String>,
}

pub fn summarize(out: &RunOutput, meta: &CellMeta) -> RunReport {
    let requests = request_records(out, meta.sla);
    let batches = batch_records(&out.batches);
    let runtime = out.runtime();
    let breakdown = gpu_breakdown(&out.timeline);
    let (attain, empty) = attainment(&requests, meta.sla);
    let mut warnings = out.warnings.clone();
    if empty {
        warnings.push("no requests in run; attainment reported as 100%".to_owned());
    }
    let shown = breakdown.rounded();
    let summary = RunSummary {
        strategy: meta.strategy,
        pattern: meta.pattern,
        mean_rps: meta.mean_rps,
        sla_s: meta.sla.limit(),
        mode: meta.mode,
        total_requests: requests.len() as u64,
        fulfilled: requests.iter().filter(|r| r.fulfilled).count() as u64,
        attainment_pct: attain,
        overall_throughput_rps: overall_throughput(&requests, runtime),
        inference_rate_rps: inference_rate(&batches),
        gpu_util_pct: shown.infer_pct,
        load_pct: shown.load_pct,
        unload_pct: shown.unload_pct,
        idle_pct: shown.idle_pct,
        swap_count: out.swap_count,
        runtime_s: runtime,
        seed: meta.seed,
    };
    RunReport {
        requests,
        batches,
        timeline: timeline_records(&out.timeline),
        summary,
        breakdown,
        warnings,
    }
}

/// Serializes rows with a header line (also when there are no rows).
pub fn to_csv_bytes<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Runtime(format!("csv serialization failed: {e}"));
    w.write_record(header).map_err(ser)?;
    for row in rows {
        w.serialize(row).map_err(ser)?;
    }
    w.into_inner()
        .map_err(|e| Error::Runtime(format!("csv serialization failed: {e}")))
}

pub const REQUESTS_HEADER: [&str; 10] = [
    "request_id",
    "model",
    "arrival_s",
    "dispatch_s",
    "completion_s",
    "batch_id",
    "batch_size",
    "latency_s",
    "sla_met",
    "fulfilled",
];
pub const BATCHES_HEADER: [&str; 9] = [
    "batch_id",
    "model",
    "size",
    "swap_incurred",
    "load_s",
    "start_s",
    "end_s",
    "processing_s",
    "inference_throughput_rps",
];
pub const TIMELINE_HEADER: [&str; 4] = ["start_s", "end_s", "kind", "model"];
pub const SUMMARY_HEADER: [&str; 17] = [
    "strategy",
    "pattern",
    "mean_rps",
    "sla_s",
    "mode",
    "total_requests",
    "fulfilled",
    "attainment_pct",
    "overall_throughput_rps",
    "inference_rate_rps",
    "gpu_util_pct",
    "load_pct",
    "unload_pct",
    "idle_pct",
    "swap_count",
    "runtime_s",
    "seed",
];

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::output(path, e))
}

/// Writes the four per-run CSV files into `out_dir`, creating it if needed.
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::output(out_dir, e))?;
    write_file(
        &out_dir.join(REQUESTS_CSV),
        &to_csv_bytes(&REQUESTS_HEADER, &report.requests)?,
    )?;
    write_file(
        &out_dir.join(BATCHES_CSV),
        &to_csv_bytes(&BATCHES_HEADER, &report.batches)?,
    )?;
    write_file(
        &out_dir.join(TIMELINE_CSV),
        &to_csv_bytes(&TIMELINE_HEADER, &report.timeline)?,
    )?;
    write_file(
        &out_dir.join(SUMMARY_CSV),
        &to_csv_bytes(&SUMMARY_HEADER, std::slice::from_ref(&report.summary))?,
    )
}

/// Reads rows of a CSV file written by this module.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::input(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::input(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, SimParams};
    use crate::profiles::{BatchCurve, CostModel, LoadProfile, ModelProfile};
    use crate::scheduler::Strategy;
    use crate::traffic::{Arrival, ArrivalTrace};

    fn s(v: f64) -> TimeSpan {
        TimeSpan::from_secs_f64(v)
    }

    fn sla(v: f64) -> SlaPolicy {
        SlaPolicy::from_secs_f64(v).unwrap()
    }

    fn rec(latency: Option<f64>) -> RequestRecord {
        RequestRecord {
            request_id: 0,
            model: ModelId::new("a"),
            arrival_s: TimePoint::ZERO,
            dispatch_s: latency.map(|_| TimePoint::ZERO),
            completion_s: latency.map(TimePoint::from_secs_f64),
            batch_id: latency.map(|_| 0),
            batch_size: latency.map(|_| 1),
            latency_s: latency.map(s),
            sla_met: false,
            fulfilled: latency.is_some(),
        }
    }

    fn batch(size: u32, proc_s: f64) -> BatchRecord {
        BatchRecord {
            batch_id: 0,
            model: ModelId::new("a"),
            size,
            swap_incurred: false,
            load_s: TimeSpan::ZERO,
            start_s: TimePoint::ZERO,
            end_s: TimePoint::ZERO + s(proc_s),
            processing_s: s(proc_s),
            inference_throughput_rps: size as f64 / proc_s,
        }
    }

    #[test]
    fn attainment_examples() {
        let recs = [rec(Some(10.0)), rec(Some(50.0)), rec(Some(70.0))];
        let (pct, _) = attainment(&recs, sla(60.0));
        assert!((pct - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(attainment(&[rec(None), rec(None)], sla(60.0)), (0.0, false));
        assert_eq!(attainment(&[], sla(60.0)), (100.0, true));
    }

    #[test]
    fn throughput_examples() {
        let recs: Vec<_> = (0..2400)
            .map(|_| rec(Some(1.0)))
            .chain((0..10).map(|_| rec(None)))
            .collect();
        assert_eq!(overall_throughput(&recs, s(1200.0)), 2.0);
        assert_eq!(overall_throughput(&[rec(None)], s(1200.0)), 0.0);
    }

    #[test]
    fn inference_rate_examples() {
        assert_eq!(inference_rate(&[batch(4, 0.5)]), 8.0);
        let r = inference_rate(&[batch(2, 0.26), batch(4, 0.5)]);
        assert!((r - 6.0 / 0.76).abs() < 1e-9, "{r}");
        assert_eq!(inference_rate(&[]), 0.0);
        // all batches at one profiled size reproduce the curve throughput
        assert_eq!(inference_rate(&[batch(4, 0.5), batch(4, 0.5)]), 8.0);
    }

    #[test]
    fn largest_remainder_rounding_sums_to_100() {
        let b = GpuBreakdown {
            infer_pct: 100.0 / 3.0,
            load_pct: 100.0 / 3.0,
            unload_pct: 0.0,
            idle_pct: 100.0 / 3.0,
        };
        let r = b.rounded();
        assert!((r.total() - 100.0).abs() < 1e-9);
        assert_eq!(r.infer_pct, 33.34);
        assert_eq!(r.load_pct, 33.33);
    }

    fn oracle() -> (ArrivalTrace, CostModel) {
        let model = |name: &str| ModelProfile {
            id: ModelId::new(name),
            size_gb: 1.0,
            curve: BatchCurve::new(vec![(1, s(4.0)), (2, s(6.0))]).unwrap(),
            cc: LoadProfile::fixed(s(20.0), s(0.01)),
            nocc: LoadProfile::fixed(s(10.0), s(0.01)),
        };
        let cm = CostModel::new(vec![model("A"), model("B")]).unwrap();
        let arrivals = [("A", 0.0), ("A", 5.0), ("B", 6.0), ("B", 7.0)]
            .iter()
            .map(|&(m, at)| Arrival {
                at: TimePoint::from_secs_f64(at),
                model: ModelId::new(m),
            })
            .collect();
        (
            ArrivalTrace {
                arrivals,
                duration: s(37.01),
                seed: 0,
            },
            cm,
        )
    }

    fn oracle_report() -> RunReport {
        let (trace, cm) = oracle();
        let params = SimParams {
            strategy: Strategy::new(StrategyKind::BestBatch),
            sla: sla(40.0),
            mode: ExecMode::NoCc,
            seed: 7,
            run_length: s(37.01),
        };
        let out = run(&trace, &cm, &params).unwrap();
        let meta = CellMeta {
            strategy: StrategyKind::BestBatch,
            pattern: Pattern::Gamma,
            mean_rps: 4.0,
            sla: sla(40.0),
            mode: ExecMode::NoCc,
            seed: 7,
        };
        summarize(&out, &meta)
    }

    #[test]
    fn oracle_summary() {
        let rep = oracle_report();
        let sm = &rep.summary;
        assert_eq!(sm.total_requests, 4);
        assert_eq!(sm.fulfilled, 4);
        assert_eq!(sm.swap_count, 2);
        assert_eq!(sm.runtime_s, s(37.01));
        assert!((sm.overall_throughput_rps - 4.0 / 37.01).abs() < 1e-12);
        assert!((sm.overall_throughput_rps - 0.108).abs() < 5e-4);
        assert_eq!(sm.inference_rate_rps, 4.0 / 12.0);
        assert_eq!(sm.attainment_pct, 100.0);
        assert!(sm.overall_throughput_rps <= sm.inference_rate_rps);
        assert!((rep.breakdown.total() - 100.0).abs() < 1e-9);
        assert!((sm.gpu_util_pct + sm.load_pct + sm.unload_pct + sm.idle_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn writes_four_files_with_exact_headers() {
        let rep = oracle_report();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&rep, dir.path()).unwrap();
        let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
        let requests = read(REQUESTS_CSV);
        let mut lines = requests.lines();
        assert_eq!(lines.next().unwrap(), REQUESTS_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "0,A,0.000000,15.000000,21.000000,0,2,21.000000,true,true"
        );
        assert_eq!(requests.lines().count(), 5);
        let batches = read(BATCHES_CSV);
        assert_eq!(batches.lines().count(), 3);
        assert_eq!(
            batches.lines().nth(2).unwrap(),
            "1,B,2,true,10.000000,31.010000,37.010000,6.000000,0.333333"
        );
        let timeline = read(TIMELINE_CSV);
        assert_eq!(timeline.lines().next().unwrap(), "start_s,end_s,kind,model");
        assert_eq!(timeline.lines().nth(1).unwrap(), "0.000000,5.000000,idle,");
        let summary = read(SUMMARY_CSV);
        assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER.join(","));
        let row = summary.lines().nth(1).unwrap().to_owned();
        assert!(
            row.starts_with("best_batch,gamma,4,40.000000,nocc,4,4,100.00,"),
            "{row}"
        );

        let back: Vec<RunSummary> = read_csv(&dir.path().join(SUMMARY_CSV)).unwrap();
        assert_eq!(back[0].swap_count, 2);
        let reqs: Vec<RequestRecord> = read_csv(&dir.path().join(REQUESTS_CSV)).unwrap();
        assert_eq!(reqs, rep.requests);
        let (pct, _) = attainment(&reqs, sla(40.0));
        assert_eq!(pct, back[0].attainment_pct);
    }

    #[test]
    fn empty_run_writes_headers_only() {
        let (_, cm) = oracle();
        let trace = ArrivalTrace::empty(s(100.0));
        let params = SimParams {
            strategy: Strategy::new(StrategyKind::BestBatchTimer),
            sla: sla(40.0),
            mode: ExecMode::Cc,
            seed: 1,
            run_length: s(100.0),
        };
        let out = run(&trace, &cm, &params).unwrap();
        let meta = CellMeta {
            strategy: StrategyKind::BestBatchTimer,
            pattern: Pattern::Ramp,
            mean_rps: 1.0,
            sla: sla(40.0),
            mode: ExecMode::Cc,
            seed: 1,
        };
        let rep = summarize(&out, &meta);
        assert_eq!(rep.summary.idle_pct, 100.0);
        assert_eq!(rep.summary.attainment_pct, 100.0);
        assert!(!rep.warnings.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&rep, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join(REQUESTS_CSV))
                .unwrap()
                .lines()
                .count(),
            1
        );
        assert_eq!(
            fs::read_to_string(dir.path().join(BATCHES_CSV))
                .unwrap()
                .lines()
                .count(),
            1
        );
        assert_eq!(
            fs::read_to_string(dir.path().join(SUMMARY_CSV))
                .unwrap()
                .lines()
                .count(),
            2
        );
    }

    #[test]
    fn unwritable_output_names_path() {
        let rep = oracle_report();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_outputs(&rep, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
}
