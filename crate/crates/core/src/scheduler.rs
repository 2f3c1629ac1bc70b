//! Per-model FIFO queues and batching strategies.
//!
//! Four strategies combine the basic batching plans:
//!
//! | strategy                   | plans                             |
//! |----------------------------|-----------------------------------|
//! | `best_batch`               | best batch                        |
//! | `best_batch_timer`         | best batch + timer                |
//! | `select_batch_timer`       | select batch + timer              |
//! | `best_batch_partial_timer` | best batch + partial batch + timer|
//!
//! *Best batch* waits for a queue to hold the model's optimal batch size
//! (OBS). *Timer* forces a queue eligible once its head request has waited
//! until `arrival + sla - est_load - est_proc - margin`. *Select batch* sizes
//! batches as `floor(rate * (sla - est_load - est_proc))`, so that the time to
//! accumulate a batch fits within the latency left after loading and
//! processing. *Partial batch* serves what is queued for the resident model
//! before swapping to another one.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{ExecMode, ModelId, SlaPolicy, TimePoint, TimeSpan};
use crate::error::{Error, Result};
use crate::profiles::CostModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    BestBatch,
    BestBatchTimer,
    SelectBatchTimer,
    BestBatchPartialTimer,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::BestBatch,
        StrategyKind::BestBatchTimer,
        StrategyKind::SelectBatchTimer,
        StrategyKind::BestBatchPartialTimer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::BestBatch => "best_batch",
            StrategyKind::BestBatchTimer => "best_batch_timer",
            StrategyKind::SelectBatchTimer => "select_batch_timer",
            StrategyKind::BestBatchPartialTimer => "best_batch_partial_timer",
        }
    }

    pub fn uses_timer(self) -> bool {
        !matches!(self, StrategyKind::BestBatch)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param("strategy", format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub timer_margin: TimeSpan,
    pub rate_window: TimeSpan,
    /// Rate assumed while fewer than two arrivals are in the window.
    pub default_rate_rps: f64,
    pub drain_at_end: bool,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Strategy {
            kind,
            timer_margin: TimeSpan::from_secs(1),
            rate_window: TimeSpan::from_secs(60),
            default_rate_rps: 1.0,
            drain_at_end: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate_window.is_zero() {
            return Err(Error::param("rate_window_s", "must be positive"));
        }
        if !(self.default_rate_rps.is_finite() && self.default_rate_rps >= 0.0) {
            return Err(Error::param(
                "default_rate_rps",
                format!("must be non-negative, got {}", self.default_rate_rps),
            ));
        }
        Ok(())
    }
}

/// Latest instant at which a queued request can still start its batch and,
/// given the estimates, finish within the SLA. Returns the deadline and
/// whether it was clamped to the arrival time because the estimates alone
/// already exceed the SLA.
pub fn timer_deadline(
    arrival: TimePoint,
    sla: SlaPolicy,
    est_load: TimeSpan,
    est_proc: TimeSpan,
    margin: TimeSpan,
) -> (TimePoint, bool) {
    match sla.limit().checked_sub(est_load + est_proc + margin) {
        Some(slack) if !slack.is_zero() => (arrival + slack, false),
        _ => (arrival, true),
    }
}

/// Largest batch that can accumulate within the latency budget left after
/// loading and processing, clamped to `[1, max_batch]`.
pub fn select_batch_size(rate_rps: f64, sla: SlaPolicy, est_load: TimeSpan, est_proc: TimeSpan, max_batch: u32) -> u32 {
    let desired = sla.limit().saturating_sub(est_load + est_proc).as_secs_f64();
    let size = (rate_rps.max(0.0) * desired).floor();
    if size < 1.0 {
        1
    } else if size >= f64::from(max_batch) {
        max_batch
    } else {
        size as u32
    }
}

/// Sliding-window arrival-rate estimate per model.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    window: TimeSpan,
    default_rate: f64,
    arrivals: Vec<VecDeque<TimePoint>>,
}

impl RateEstimator {
    pub fn new(models: usize, window: TimeSpan, default_rate: f64) -> Self {
        RateEstimator {
            window,
            default_rate,
            arrivals: vec![VecDeque::new(); models],
        }
    }

    pub fn record(&mut self, model: usize, at: TimePoint) {
        let q = &mut self.arrivals[model];
        q.push_back(at);
        while q.front().is_some_and(|&t| t + self.window <= at) {
            q.pop_front();
        }
    }

    /// `(N - 1) / (t_last - t_first)` over arrivals in `(now - window, now]`;
    /// the default rate with fewer than two arrivals or a zero span.
    pub fn estimate(&self, model: usize, now: TimePoint) -> f64 {
        let q = &self.arrivals[model];
        let lo = now.as_micros().checked_sub(self.window.as_micros());
        let start = match lo {
            Some(lo) => q.partition_point(|t| t.as_micros() <= lo),
            None => 0,
        };
        let end = q.partition_point(|t| *t <= now);
        let n = end.saturating_sub(start);
        if n < 2 {
            return self.default_rate;
        }
        let span = q[end - 1].saturating_since(q[start]);
        if span.is_zero() {
            return self.default_rate;
        }
        (n - 1) as f64 / span.as_secs_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedRequest {
    pub id: u64,
    pub arrival: TimePoint,
    pub deadline: TimePoint,
}

/// One FIFO queue per model plus the resident model.
#[derive(Debug, Clone, Default)]
pub struct QueueState {
    queues: Vec<VecDeque<QueuedRequest>>,
    loaded: Option<usize>,
}

impl QueueState {
    pub fn new(models: usize) -> Self {
        QueueState {
            queues: vec![VecDeque::new(); models],
            loaded: None,
        }
    }

    pub fn queue(&self, model: usize) -> &VecDeque<QueuedRequest> {
        &self.queues[model]
    }

    pub fn loaded(&self) -> Option<usize> {
        self.loaded
    }

    pub fn total_queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }
}

/// Scheduling outcome at a decision point. Models are indices into the
/// scheduler's model table (cost-model order).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Run a batch on the resident model.
    Dispatch { model: usize, count: u32 },
    /// Unload the resident model (if any), load `model`, then run a batch.
    SwapThenDispatch { model: usize, count: u32 },
    /// Nothing to do; the next timer deadline, if one is pending.
    Wait { until: Option<TimePoint> },
}

/// Per-model constants derived from the cost model, mode and SLA.
#[derive(Debug, Clone)]
pub struct ModelPlan {
    pub id: ModelId,
    pub obs: u32,
    pub max_batch: u32,
    pub est_load: TimeSpan,
    pub est_proc: TimeSpan,
    /// Whether deadlines for this model collapse onto arrival times.
    pub deadline_clamped: bool,
}

/// Candidate queue considered by [`pick_next_model`].
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub model: usize,
    pub name: &'a ModelId,
    pub head_arrival: TimePoint,
    pub len: usize,
}

/// Oldest head request first; ties go to the longer queue, then the
/// lexicographically smaller model name.
pub fn pick_next_model(eligible: &[Candidate<'_>]) -> usize {
    eligible
        .iter()
        .min_by(|a, b| {
            a.head_arrival
                .cmp(&b.head_arrival)
                .then(b.len.cmp(&a.len))
                .then(a.name.cmp(b.name))
        })
        .expect("non-empty eligible set")
        .model
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    strategy: Strategy,
    sla: SlaPolicy,
    plans: Vec<ModelPlan>,
    index: HashMap<ModelId, usize>,
    state: QueueState,
    rates: RateEstimator,
}

struct Eligible {
    model: usize,
    count: u32,
    expired: bool,
}

impl Scheduler {
    pub fn new(strategy: Strategy, sla: SlaPolicy, cost_model: &CostModel, mode: ExecMode) -> Result<Self> {
        strategy.validate()?;
        let plans: Vec<ModelPlan> = cost_model
            .models()
            .iter()
            .map(|m| {
                let obs = m.curve.obs();
                let est_load = m.load_profile(mode).load_mean;
                let est_proc = m.curve.processing_time(obs).expect("obs is profiled");
                let (_, clamped) = timer_deadline(TimePoint::ZERO, sla, est_load, est_proc, strategy.timer_margin);
                ModelPlan {
                    id: m.id.clone(),
                    obs,
                    max_batch: m.curve.max_batch(),
                    est_load,
                    est_proc,
                    deadline_clamped: clamped,
                }
            })
            .collect();
        let index = plans.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        let n = plans.len();
        Ok(Scheduler {
            strategy,
            sla,
            plans,
            index,
            state: QueueState::new(n),
            rates: RateEstimator::new(n, strategy.rate_window, strategy.default_rate_rps),
        })
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn plans(&self) -> &[ModelPlan] {
        &self.plans
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    pub fn model_index(&self, id: &ModelId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    /// Messages for models whose SLA is too tight for the load and
    /// processing estimates.
    pub fn warnings(&self) -> Vec<String> {
        self.plans
            .iter()
            .filter(|p| p.deadline_clamped)
            .map(|p| {
                format!(
                    "model `{}`: SLA {} s leaves no slack after load {} s + processing {} s + margin {} s; timers fire on arrival",
                    p.id,
                    self.sla.limit(),
                    p.est_load,
                    p.est_proc,
                    self.strategy.timer_margin
                )
            })
            .collect()
    }

    /// Appends a request to its model's queue. Returns the model index and
    /// the request's timer deadline.
    pub fn enqueue(&mut self, id: u64, model: &ModelId, arrival: TimePoint) -> Result<(usize, TimePoint)> {
        let m = self.model_index(model)?;
        let plan = &self.plans[m];
        let (deadline, _) = timer_deadline(
            arrival,
            self.sla,
            plan.est_load,
            plan.est_proc,
            self.strategy.timer_margin,
        );
        debug_assert!(self.state.queues[m].back().is_none_or(|b| b.arrival <= arrival));
        self.state.queues[m].push_back(QueuedRequest { id, arrival, deadline });
        self.rates.record(m, arrival);
        Ok((m, deadline))
    }

    pub fn estimate_rate(&self, model: usize, now: TimePoint) -> f64 {
        self.rates.estimate(model, now)
    }

    fn target_size(&self, model: usize, now: TimePoint) -> u32 {
        let plan = &self.plans[model];
        match self.strategy.kind {
            StrategyKind::SelectBatchTimer => select_batch_size(
                self.rates.estimate(model, now),
                self.sla,
                plan.est_load,
                plan.est_proc,
                plan.max_batch,
            ),
            _ => plan.obs,
        }
    }

    fn eligibility(&self, model: usize, now: TimePoint, draining: bool) -> Option<Eligible> {
        let q = &self.state.queues[model];
        let head = q.front()?;
        let target = self.target_size(model, now);
        let len = q.len().min(u32::MAX as usize) as u32;
        let expired = self.strategy.kind.uses_timer() && head.deadline <= now;
        if len >= target {
            Some(Eligible {
                model,
                count: target,
                expired,
            })
        } else if expired || draining {
            Some(Eligible {
                model,
                count: len,
                expired,
            })
        } else {
            None
        }
    }

    /// Chooses what the idle or ready GPU does next. With `draining` set every
    /// non-empty queue is eligible (end-of-run drain).
    pub fn decide(&self, now: TimePoint, draining: bool) -> Decision {
        let eligible: Vec<Eligible> = (0..self.plans.len())
            .filter_map(|m| self.eligibility(m, now, draining))
            .collect();
        if eligible.is_empty() {
            return Decision::Wait {
                until: self.next_deadline(now),
            };
        }
        let candidates: Vec<Candidate<'_>> = eligible
            .iter()
            .map(|e| {
                let q = &self.state.queues[e.model];
                Candidate {
                    model: e.model,
                    name: &self.plans[e.model].id,
                    head_arrival: q.front().expect("eligible queue is non-empty").arrival,
                    len: q.len(),
                }
            })
            .collect();
        let chosen = pick_next_model(&candidates);
        let loaded = self.state.loaded;

        if self.strategy.kind == StrategyKind::BestBatchPartialTimer {
            if let Some(l) = loaded {
                let resident = &self.state.queues[l];
                let other_expired = eligible.iter().any(|e| e.model != l && e.expired);
                if chosen != l && !resident.is_empty() && !other_expired {
                    let count = resident.len().min(self.plans[l].obs as usize) as u32;
                    return Decision::Dispatch { model: l, count };
                }
            }
        }

        let count = eligible
            .iter()
            .find(|e| e.model == chosen)
            .expect("chosen model is eligible")
            .count;
        if loaded == Some(chosen) {
            Decision::Dispatch { model: chosen, count }
        } else {
            Decision::SwapThenDispatch { model: chosen, count }
        }
    }

    fn next_deadline(&self, now: TimePoint) -> Option<TimePoint> {
        if !self.strategy.kind.uses_timer() {
            return None;
        }
        self.state
            .queues
            .iter()
            .filter_map(|q| q.front())
            .map(|h| h.deadline)
            .filter(|&d| d > now)
            .min()
    }

    /// Removes the `count` oldest requests of `model` for dispatch.
    pub fn take(&mut self, model: usize, count: u32) -> Vec<QueuedRequest> {
        let q = &mut self.state.queues[model];
        assert!(
            count >= 1 && count as usize <= q.len(),
            "dispatch of {count} from queue of {} for model `{}`",
            q.len(),
            self.plans[model].id
        );
        assert!(count <= self.plans[model].max_batch, "dispatch above max batch");
        q.drain(..count as usize).collect()
    }

    pub fn set_loaded(&mut self, model: Option<usize>) {
        self.state.loaded = model;
    }

    pub fn is_queued(&self, model: usize, id: u64) -> bool {
        // queues are FIFO by arrival and ids increase with arrival order
        self.state.queues[model].front().is_some_and(|h| h.id <= id)
    }
}
