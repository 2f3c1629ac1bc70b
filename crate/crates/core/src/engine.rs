//! Discrete-event loop over a single-GPU state machine.
//!
//! Events are ordered by `(time, seq)` where `seq` is the insertion counter,
//! so simultaneous events run in the order they were scheduled. All arrivals
//! are scheduled up front and therefore precede any timer or GPU event at the
//! same instant.
//!
//! The scheduler is consulted only at decision points: an arrival or timer
//! expiry while the GPU is free, and the end of a batch. A swap decision
//! commits its batch: the GPU unloads the resident model, loads the target
//! and runs the reserved requests without further decisions in between.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::domain::{ExecMode, ModelId, Request, SlaPolicy, TimePoint, TimeSpan};
use crate::error::{Error, Result};
use crate::profiles::CostModel;
use crate::rng::{stream, substream, SimRng};
use crate::scheduler::{Decision, Scheduler, Strategy};
use crate::traffic::ArrivalTrace;

/// Source of load, unload and inference durations. The engine treats the
/// returned spans as opaque.
pub trait Backend {
    fn load(&mut self, model: &ModelId) -> Result<TimeSpan>;
    fn unload(&mut self, model: &ModelId) -> Result<TimeSpan>;
    fn infer(&mut self, model: &ModelId, batch_size: u32) -> Result<TimeSpan>;
}

/// Backend that draws durations from a [`CostModel`].
pub struct SimulatedBackend<'a> {
    cost_model: &'a CostModel,
    mode: ExecMode,
    rng: SimRng,
}

impl<'a> SimulatedBackend<'a> {
    pub fn new(cost_model: &'a CostModel, mode: ExecMode, rng: SimRng) -> Self {
        SimulatedBackend { cost_model, mode, rng }
    }

    /// Backend whose load sampling uses the run seed's load sub-stream.
    pub fn seeded(cost_model: &'a CostModel, mode: ExecMode, seed: u64) -> Self {
        Self::new(cost_model, mode, substream(seed, stream::LOAD))
    }
}

impl Backend for SimulatedBackend<'_> {
    fn load(&mut self, model: &ModelId) -> Result<TimeSpan> {
        let p = self.cost_model.get(model)?.load_profile(self.mode);
        Ok(p.sample_load(&mut self.rng))
    }

    fn unload(&mut self, model: &ModelId) -> Result<TimeSpan> {
        let p = self.cost_model.get(model)?.load_profile(self.mode);
        Ok(p.sample_unload(&mut self.rng))
    }

    fn infer(&mut self, model: &ModelId, batch_size: u32) -> Result<TimeSpan> {
        self.cost_model
            .get(model)?
            .curve
            .processing_time(batch_size)
            .map_err(|e| match e {
                Error::OomBoundary { size, max_batch, .. } => Error::OomBoundary {
                    model: model.to_string(),
                    size,
                    max_batch,
                },
                other => other,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GpuState {
    Idle,
    Loading {
        model: usize,
        done_at: TimePoint,
    },
    Ready {
        model: usize,
    },
    Inferring {
        model: usize,
        batch_id: u64,
        done_at: TimePoint,
    },
    Unloading {
        model: usize,
        done_at: TimePoint,
    },
}

impl GpuState {
    fn is_free(&self) -> bool {
        matches!(self, GpuState::Idle | GpuState::Ready { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IntervalKind {
    Load,
    Unload,
    Infer,
    Idle,
}

impl IntervalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalKind::Load => "load",
            IntervalKind::Unload => "unload",
            IntervalKind::Infer => "infer",
            IntervalKind::Idle => "idle",
        }
    }
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub start: TimePoint,
    pub end: TimePoint,
    pub kind: IntervalKind,
    pub model: Option<ModelId>,
}

impl Interval {
    pub fn duration(&self) -> TimeSpan {
        self.end.saturating_since(self.start)
    }
}

/// Contiguous partition of `[0, end]` into labeled GPU intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Timeline {
    intervals: Vec<Interval>,
}

impl Timeline {
    /// Fills the gaps between busy intervals (sorted, non-overlapping) with
    /// idle time up to `end`.
    fn from_busy(busy: Vec<Interval>, end: TimePoint) -> Self {
        let mut intervals = Vec::with_capacity(busy.len() * 2 + 1);
        let mut cursor = TimePoint::ZERO;
        for iv in busy {
            assert!(iv.start >= cursor, "overlapping GPU intervals at {}", iv.start);
            if iv.start > cursor {
                intervals.push(Interval {
                    start: cursor,
                    end: iv.start,
                    kind: IntervalKind::Idle,
                    model: None,
                });
            }
            cursor = iv.end;
            if iv.end > iv.start {
                intervals.push(iv);
            }
        }
        if end > cursor {
            intervals.push(Interval {
                start: cursor,
                end,
                kind: IntervalKind::Idle,
                model: None,
            });
        }
        Timeline { intervals }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn start(&self) -> TimePoint {
        self.intervals.first().map_or(TimePoint::ZERO, |i| i.start)
    }

    pub fn end(&self) -> TimePoint {
        self.intervals.last().map_or(TimePoint::ZERO, |i| i.end)
    }

    pub fn total(&self, kind: IntervalKind) -> TimeSpan {
        self.intervals
            .iter()
            .filter(|i| i.kind == kind)
            .map(Interval::duration)
            .sum()
    }

    /// Checks that intervals are non-empty, contiguous and start at zero.
    pub fn check_partition(&self) -> Result<()> {
        let mut cursor = TimePoint::ZERO;
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.start != cursor {
                return Err(Error::Runtime(format!(
                    "timeline interval {i} starts at {} but previous ended at {cursor}",
                    iv.start
                )));
            }
            if iv.end <= iv.start {
                return Err(Error::Runtime(format!("timeline interval {i} is empty or reversed")));
            }
            cursor = iv.end;
        }
        Ok(())
    }
}

/// A dispatched batch and the GPU work it caused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub id: u64,
    pub model: ModelId,
    pub size: u32,
    pub swap_incurred: bool,
    pub unload: TimeSpan,
    pub load: TimeSpan,
    /// Inference start.
    pub start: TimePoint,
    pub end: TimePoint,
    pub members: Vec<u64>,
}

impl Batch {
    pub fn processing(&self) -> TimeSpan {
        self.end.saturating_since(self.start)
    }
}

/// Fixed knobs of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub strategy: Strategy,
    pub sla: SlaPolicy,
    pub mode: ExecMode,
    pub seed: u64,
    /// Measurement window; no new batches start after it unless draining.
    pub run_length: TimeSpan,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// One entry per trace arrival, indexed by request id.
    pub requests: Vec<Request>,
    pub batches: Vec<Batch>,
    pub timeline: Timeline,
    pub swap_count: u32,
    pub run_length: TimeSpan,
    pub warnings: Vec<String>,
}

impl RunOutput {
    /// Later of the measurement window and the last GPU activity.
    pub fn runtime(&self) -> TimeSpan {
        self.timeline
            .end()
            .saturating_since(TimePoint::ZERO)
            .max(self.run_length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival(usize),
    TimerFire(usize),
    LoadDone,
    BatchDone,
    UnloadDone,
    RunEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: TimePoint,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: TimePoint, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

struct Engine<'a, B: Backend> {
    params: SimParams,
    backend: &'a mut B,
    scheduler: Scheduler,
    events: EventQueue,
    gpu: GpuState,
    requests: Vec<Request>,
    request_model: Vec<usize>,
    batches: Vec<Batch>,
    busy: Vec<Interval>,
    swap_count: u32,
    /// Batch reserved by a swap decision, run once the target model is loaded.
    pending: Option<usize>,
}

/// Runs one experiment cell with the cost-model backend.
pub fn run(trace: &ArrivalTrace, cost_model: &CostModel, params: &SimParams) -> Result<RunOutput> {
    let mut backend = SimulatedBackend::seeded(cost_model, params.mode, params.seed);
    run_with_backend(trace, cost_model, params, &mut backend)
}

/// Runs one experiment cell against an arbitrary backend. The cost model
/// still supplies the scheduler's estimates (OBS, load means).
pub fn run_with_backend<B: Backend>(
    trace: &ArrivalTrace,
    cost_model: &CostModel,
    params: &SimParams,
    backend: &mut B,
) -> Result<RunOutput> {
    let scheduler = Scheduler::new(params.strategy, params.sla, cost_model, params.mode)?;
    let mut requests = Vec::with_capacity(trace.len());
    let mut request_model = Vec::with_capacity(trace.len());
    let mut events = EventQueue::default();
    for (i, a) in trace.arrivals.iter().enumerate() {
        request_model.push(scheduler.model_index(&a.model)?);
        requests.push(Request::new(i as u64, a.model.clone(), a.at));
        events.push(a.at, EventKind::Arrival(i));
    }
    if params.strategy.drain_at_end {
        events.push(TimePoint::ZERO + params.run_length, EventKind::RunEnd);
    }
    let warnings = scheduler.warnings();
    let mut engine = Engine {
        params: *params,
        backend,
        scheduler,
        events,
        gpu: GpuState::Idle,
        requests,
        request_model,
        batches: Vec::new(),
        busy: Vec::new(),
        swap_count: 0,
        pending: None,
    };
    engine.run()?;
    let Engine {
        requests,
        batches,
        busy,
        swap_count,
        ..
    } = engine;
    let end = busy
        .last()
        .map_or(TimePoint::ZERO, |i| i.end)
        .max(TimePoint::ZERO + params.run_length);
    let timeline = Timeline::from_busy(busy, end);
    Ok(RunOutput {
        requests,
        batches,
        timeline,
        swap_count,
        run_length: params.run_length,
        warnings,
    })
}

impl<B: Backend> Engine<'_, B> {
    fn run(&mut self) -> Result<()> {
        while let Some(ev) = self.events.pop() {
            let now = ev.time;
            match ev.kind {
                EventKind::Arrival(i) => {
                    let r = &self.requests[i];
                    let (_, deadline) = self.scheduler.enqueue(r.id, &r.model, r.arrival)?;
                    if self.params.strategy.kind.uses_timer() {
                        self.events.push(deadline.max(now), EventKind::TimerFire(i));
                    }
                    self.maybe_decide(now)?;
                }
                EventKind::TimerFire(i) => {
                    if self.scheduler.is_queued(self.request_model[i], i as u64) {
                        self.maybe_decide(now)?;
                    }
                }
                EventKind::RunEnd => self.maybe_decide(now)?,
                EventKind::UnloadDone => {
                    self.gpu = GpuState::Idle;
                    self.scheduler.set_loaded(None);
                    self.start_load(now)?;
                }
                EventKind::LoadDone => {
                    let GpuState::Loading { model, .. } = self.gpu else {
                        return Err(Error::Runtime(format!(
                            "load finished at {now} while GPU {:?}",
                            self.gpu
                        )));
                    };
                    self.gpu = GpuState::Ready { model };
                    self.scheduler.set_loaded(Some(model));
                    let b = self.pending.take().expect("swap reserved a batch");
                    self.start_infer(b, now)?;
                }
                EventKind::BatchDone => {
                    let GpuState::Inferring { model, batch_id, .. } = self.gpu else {
                        return Err(Error::Runtime(format!(
                            "batch finished at {now} while GPU {:?}",
                            self.gpu
                        )));
                    };
                    let batch = &self.batches[batch_id as usize];
                    for &id in &batch.members {
                        let r = &mut self.requests[id as usize];
                        r.dispatch = Some(batch.start);
                        r.completion = Some(now);
                        r.batch_id = Some(batch_id);
                    }
                    self.gpu = GpuState::Ready { model };
                    self.maybe_decide(now)?;
                }
            }
        }
        Ok(())
    }

    fn draining(&self, now: TimePoint) -> bool {
        self.params.strategy.drain_at_end && now >= TimePoint::ZERO + self.params.run_length
    }

    fn maybe_decide(&mut self, now: TimePoint) -> Result<()> {
        if !self.gpu.is_free() {
            return Ok(());
        }
        let past_window = now > TimePoint::ZERO + self.params.run_length;
        let draining = self.draining(now);
        if past_window && !draining {
            return Ok(());
        }
        match self.scheduler.decide(now, draining) {
            Decision::Wait { .. } => Ok(()),
            Decision::Dispatch { model, count } => {
                assert_eq!(self.gpu, GpuState::Ready { model }, "dispatch to non-resident model");
                let b = self.reserve(model, count, false);
                self.start_infer(b, now)
            }
            Decision::SwapThenDispatch { model, count } => {
                self.swap_count += 1;
                let b = self.reserve(model, count, true);
                self.pending = Some(b);
                match self.gpu {
                    GpuState::Ready { model: old } => {
                        let id = self.scheduler.plans()[old].id.clone();
                        let d = self.backend.unload(&id)?;
                        self.batches[b].unload = d;
                        self.busy.push(Interval {
                            start: now,
                            end: now + d,
                            kind: IntervalKind::Unload,
                            model: Some(id),
                        });
                        self.gpu = GpuState::Unloading {
                            model: old,
                            done_at: now + d,
                        };
                        self.scheduler.set_loaded(None);
                        self.events.push(now + d, EventKind::UnloadDone);
                        Ok(())
                    }
                    _ => self.start_load(now),
                }
            }
        }
    }

    fn reserve(&mut self, model: usize, count: u32, swap: bool) -> usize {
        let taken = self.scheduler.take(model, count);
        let id = self.batches.len();
        self.batches.push(Batch {
            id: id as u64,
            model: self.scheduler.plans()[model].id.clone(),
            size: count,
            swap_incurred: swap,
            unload: TimeSpan::ZERO,
            load: TimeSpan::ZERO,
            start: TimePoint::ZERO,
            end: TimePoint::ZERO,
            members: taken.iter().map(|q| q.id).collect(),
        });
        id
    }

    fn start_load(&mut self, now: TimePoint) -> Result<()> {
        let b = self.pending.expect("load without a reserved batch");
        let id = self.batches[b].model.clone();
        let model = self.scheduler.model_index(&id)?;
        let d = self.backend.load(&id)?;
        if d.is_zero() {
            return Err(Error::Runtime(format!("zero load time for `{id}`")));
        }
        self.batches[b].load = d;
        self.busy.push(Interval {
            start: now,
            end: now + d,
            kind: IntervalKind::Load,
            model: Some(id),
        });
        self.gpu = GpuState::Loading {
            model,
            done_at: now + d,
        };
        self.events.push(now + d, EventKind::LoadDone);
        Ok(())
    }

    fn start_infer(&mut self, b: usize, now: TimePoint) -> Result<()> {
        let GpuState::Ready { model } = self.gpu else {
            return Err(Error::Runtime(format!(
                "inference started at {now} while GPU {:?}",
                self.gpu
            )));
        };
        let batch = &mut self.batches[b];
        let d = self.backend.infer(&batch.model, batch.size)?;
        if d.is_zero() {
            return Err(Error::Runtime(format!("zero inference time for `{}`", batch.model)));
        }
        batch.start = now;
        batch.end = now + d;
        self.busy.push(Interval {
            start: now,
            end: now + d,
            kind: IntervalKind::Infer,
            model: Some(batch.model.clone()),
        });
        self.gpu = GpuState::Inferring {
            model,
            batch_id: b as u64,
            done_at: now + d,
        };
        self.events.push(now + d, EventKind::BatchDone);
        Ok(())
    }
}
