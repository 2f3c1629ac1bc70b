//! Straight-line replay used to cross-check the event-queue engine against a straight-line replay that
//! walks time points in order and re-derives every scheduling decision from
//! the written policy, using plain integer microseconds throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relaxsim::engine::{run, IntervalKind, SimParams};
use relaxsim::profiles::{BatchCurve, CostModel, LoadProfile, ModelProfile};
use relaxsim::traffic::{Arrival, ArrivalTrace};
use relaxsim::{ExecMode, ModelId, SlaPolicy, Strategy, StrategyKind, TimePoint, TimeSpan};

pub const US: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    /// proc[n - 1] = processing time of a batch of n, every size profiled.
    pub proc: Vec<u64>,
    pub load: u64,
    pub unload: u64,
}

impl Model {
    fn obs(&self) -> u32 {
        // largest n / t, smaller n on ties: compare n1 * t2 against n2 * t1
        let mut best = 1u32;
        for n in 2..=self.proc.len() as u32 {
            let (b, t) = (best as u128, self.proc[best as usize - 1] as u128);
            if n as u128 * t > b * self.proc[n as usize - 1] as u128 {
                best = n;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub models: Vec<Model>,
    pub arrivals: Vec<(u64, usize)>,
    pub kind: StrategyKind,
    pub sla: u64,
    pub margin: u64,
    pub window: u64,
    pub default_rate: f64,
    pub drain: bool,
    pub run_length: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Replay {
    pub dispatch: Vec<Option<u64>>,
    pub completion: Vec<Option<u64>>,
    pub batch_of: Vec<Option<u64>>,
    /// (model, size, swap, unload, load, start, end)
    pub batches: Vec<(usize, u32, bool, u64, u64, u64, u64)>,
    /// (start, end, kind, model)
    pub busy: Vec<(u64, u64, &'static str, usize)>,
    pub swaps: u32,
}

struct Queued {
    id: usize,
    arrival: u64,
    deadline: u64,
}

fn uses_timer(k: StrategyKind) -> bool {
    k != StrategyKind::BestBatch
}

pub fn replay(inst: &Instance) -> Replay {
    let n = inst.arrivals.len();
    let nm = inst.models.len();
    let mut out = Replay {
        dispatch: vec![None; n],
        completion: vec![None; n],
        batch_of: vec![None; n],
        ..Replay::default()
    };
    let obs: Vec<u32> = inst.models.iter().map(Model::obs).collect();
    let est: Vec<(u64, u64)> = inst
        .models
        .iter()
        .zip(&obs)
        .map(|(m, &o)| (m.load, m.proc[o as usize - 1]))
        .collect();
    let mut queues: Vec<Vec<Queued>> = (0..nm).map(|_| Vec::new()).collect();
    let mut seen: Vec<Vec<u64>> = vec![Vec::new(); nm];
    let mut loaded: Option<usize> = None;
    // (done_at, batch index) while the GPU is busy
    let mut busy_until: Option<(u64, usize)> = None;
    let mut next_arrival = 0usize;
    let mut now = 0u64;
    let run_end = inst.run_length;

    let deadline_of = |m: usize, arrival: u64| -> u64 {
        let need = est[m].0 + est[m].1 + inst.margin;
        if inst.sla > need {
            arrival + (inst.sla - need)
        } else {
            arrival
        }
    };
    let rate = |seen: &Vec<u64>, now: u64| -> f64 {
        let lo = now.checked_sub(inst.window);
        let inside: Vec<u64> = seen
            .iter()
            .copied()
            .filter(|&t| t <= now && lo.is_none_or(|lo| t > lo))
            .collect();
        if inside.len() < 2 {
            return inst.default_rate;
        }
        let span = inside[inside.len() - 1] - inside[0];
        if span == 0 {
            return inst.default_rate;
        }
        (inside.len() - 1) as f64 / (span as f64 / US as f64)
    };

    // One decision at `now`; returns the busy period it starts, if any.
    let decide = |now: u64,
                  queues: &mut Vec<Vec<Queued>>,
                  seen: &Vec<Vec<u64>>,
                  loaded: &mut Option<usize>,
                  out: &mut Replay|
     -> Option<(u64, usize)> {
        let draining = inst.drain && now >= run_end;
        if now > run_end && !draining {
            return None;
        }
        let mut eligible: Vec<(usize, u32, bool)> = Vec::new();
        for m in 0..nm {
            let q = &queues[m];
            if q.is_empty() {
                continue;
            }
            let max = inst.models[m].proc.len() as u32;
            let target = if inst.kind == StrategyKind::SelectBatchTimer {
                let budget = inst.sla.saturating_sub(est[m].0 + est[m].1);
                let x = (rate(&seen[m], now) * (budget as f64 / US as f64)).floor();
                if x < 1.0 {
                    1
                } else if x >= max as f64 {
                    max
                } else {
                    x as u32
                }
            } else {
                obs[m]
            };
            let expired = uses_timer(inst.kind) && q[0].deadline <= now;
            let len = q.len() as u32;
            if len >= target {
                eligible.push((m, target, expired));
            } else if expired || draining {
                eligible.push((m, len, expired));
            }
        }
        if eligible.is_empty() {
            return None;
        }
        let &(mut model, mut count, _) = eligible
            .iter()
            .min_by(|a, b| {
                let (qa, qb) = (&queues[a.0], &queues[b.0]);
                qa[0]
                    .arrival
                    .cmp(&qb[0].arrival)
                    .then(qb.len().cmp(&qa.len()))
                    .then(inst.models[a.0].name.cmp(&inst.models[b.0].name))
            })
            .unwrap();
        if inst.kind == StrategyKind::BestBatchPartialTimer {
            if let Some(l) = *loaded {
                let other_expired = eligible.iter().any(|e| e.0 != l && e.2);
                if model != l && !queues[l].is_empty() && !other_expired {
                    model = l;
                    count = (queues[l].len() as u32).min(obs[l]);
                }
            }
        }
        let swap = *loaded != Some(model);
        let mut t = now;
        let (mut unload, mut load) = (0, 0);
        if swap {
            out.swaps += 1;
            if let Some(old) = *loaded {
                unload = inst.models[old].unload;
                out.busy.push((t, t + unload, "unload", old));
                t += unload;
            }
            load = inst.models[model].load;
            out.busy.push((t, t + load, "load", model));
            t += load;
            *loaded = Some(model);
        }
        let p = inst.models[model].proc[count as usize - 1];
        out.busy.push((t, t + p, "infer", model));
        let b = out.batches.len();
        out.batches.push((model, count, swap, unload, load, t, t + p));
        for q in queues[model].drain(..count as usize) {
            out.dispatch[q.id] = Some(t);
            out.batch_of[q.id] = Some(b as u64);
        }
        Some((t + p, b))
    };

    loop {
        // 1. arrivals at `now`, each followed by a decision while the GPU is free
        while next_arrival < n && inst.arrivals[next_arrival].0 == now {
            let (at, m) = inst.arrivals[next_arrival];
            queues[m].push(Queued {
                id: next_arrival,
                arrival: at,
                deadline: deadline_of(m, at),
            });
            seen[m].push(at);
            next_arrival += 1;
            if busy_until.is_none() {
                busy_until = decide(now, &mut queues, &seen, &mut loaded, &mut out);
            }
        }
        // 2. batch completion, timers and the drain point; each is a decision
        //    point, and with unchanged state repeated decisions agree
        if let Some((end, b)) = busy_until {
            if end == now {
                let members: Vec<usize> = (0..n).filter(|&i| out.batch_of[i] == Some(b as u64)).collect();
                for i in members {
                    out.completion[i] = Some(now);
                }
                busy_until = decide(now, &mut queues, &seen, &mut loaded, &mut out);
            }
        }
        let timer_due = uses_timer(inst.kind) && queues.iter().flatten().any(|q| q.deadline == now);
        let drain_due = inst.drain && now == run_end;
        if busy_until.is_none() && (timer_due || drain_due) {
            busy_until = decide(now, &mut queues, &seen, &mut loaded, &mut out);
        }

        let mut next = u64::MAX;
        if next_arrival < n {
            next = next.min(inst.arrivals[next_arrival].0);
        }
        if let Some((end, _)) = busy_until {
            next = next.min(end);
        }
        if uses_timer(inst.kind) {
            if let Some(d) = queues.iter().flatten().map(|q| q.deadline).filter(|&d| d > now).min() {
                next = next.min(d);
            }
        }
        if inst.drain && run_end > now {
            next = next.min(run_end);
        }
        if next == u64::MAX {
            break;
        }
        now = next;
    }
    out
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let nm = rng.random_range(1..=2usize);
    let models: Vec<Model> = (0..nm)
        .map(|i| {
            let max = rng.random_range(1..=4usize);
            let mut t = rng.random_range(500..5_000u64) * 1_000;
            let mut proc = Vec::new();
            for _ in 0..max {
                proc.push(t);
                t += rng.random_range(1..3_000u64) * 1_000;
            }
            Model {
                name: ["A", "B"][i].to_string(),
                proc,
                load: rng.random_range(1_000..20_000u64) * 1_000,
                unload: rng.random_range(1..50u64) * 1_000,
            }
        })
        .collect();
    let count = rng.random_range(0..=12usize);
    // coarse grid so ties between arrivals and other events happen
    let mut arrivals: Vec<(u64, usize)> = (0..count)
        .map(|_| (rng.random_range(0..60u64) * US / 2, rng.random_range(0..nm)))
        .collect();
    arrivals.sort_by_key(|a| a.0);
    let kind = StrategyKind::ALL[rng.random_range(0..4)];
    Instance {
        models,
        arrivals,
        kind,
        sla: rng.random_range(5..80u64) * US,
        margin: rng.random_range(0..3u64) * US,
        window: rng.random_range(5..60u64) * US,
        default_rate: [0.0, 0.1, 0.5, 1.0][rng.random_range(0..4)],
        drain: rng.random_bool(0.3),
        run_length: rng.random_range(10..90u64) * US,
    }
}

pub fn to_engine(inst: &Instance, mode: ExecMode) -> (ArrivalTrace, CostModel, SimParams) {
    let span = TimeSpan::from_micros;
    let models = inst
        .models
        .iter()
        .map(|m| {
            let fixed = LoadProfile::fixed(span(m.load), span(m.unload));
            // the unused mode gets a different load so a mode mix-up shows
            let other = LoadProfile::fixed(span(m.load * 2), span(m.unload));
            let (cc, nocc) = match mode {
                ExecMode::Cc => (fixed, other),
                ExecMode::NoCc => (other, fixed),
            };
            ModelProfile {
                id: ModelId::new(&m.name),
                size_gb: 1.0,
                curve: BatchCurve::new(
                    m.proc
                        .iter()
                        .enumerate()
                        .map(|(i, &t)| (i as u32 + 1, span(t)))
                        .collect(),
                )
                .unwrap(),
                cc,
                nocc,
            }
        })
        .collect();
    let last = inst.arrivals.last().map_or(0, |a| a.0);
    let trace = ArrivalTrace {
        arrivals: inst
            .arrivals
            .iter()
            .map(|&(at, m)| Arrival {
                at: TimePoint::from_micros(at),
                model: ModelId::new(&inst.models[m].name),
            })
            .collect(),
        duration: span(last.max(inst.run_length) + 1),
        seed: 0,
    };
    let mut strategy = Strategy::new(inst.kind);
    strategy.timer_margin = span(inst.margin);
    strategy.rate_window = span(inst.window);
    strategy.default_rate_rps = inst.default_rate;
    strategy.drain_at_end = inst.drain;
    let params = SimParams {
        strategy,
        sla: SlaPolicy::new(span(inst.sla)).unwrap(),
        mode,
        seed: 99,
        run_length: span(inst.run_length),
    };
    (trace, CostModel::new(models).unwrap(), params)
}

pub fn check(inst: &Instance, mode: ExecMode) -> Result<(), String> {
    let expected = replay(inst);
    let (trace, cm, params) = to_engine(inst, mode);
    let out = run(&trace, &cm, &params).unwrap();
    let us = |t: Option<TimePoint>| t.map(TimePoint::as_micros);
    let got = Replay {
        dispatch: out.requests.iter().map(|r| us(r.dispatch)).collect(),
        completion: out.requests.iter().map(|r| us(r.completion)).collect(),
        batch_of: out.requests.iter().map(|r| r.batch_id).collect(),
        batches: out
            .batches
            .iter()
            .map(|b| {
                (
                    cm.models().iter().position(|m| m.id == b.model).unwrap(),
                    b.size,
                    b.swap_incurred,
                    b.unload.as_micros(),
                    b.load.as_micros(),
                    b.start.as_micros(),
                    b.end.as_micros(),
                )
            })
            .collect(),
        busy: out
            .timeline
            .intervals()
            .iter()
            .filter(|i| i.kind != IntervalKind::Idle)
            .map(|i| {
                let m = cm
                    .models()
                    .iter()
                    .position(|p| Some(&p.id) == i.model.as_ref())
                    .unwrap();
                (i.start.as_micros(), i.end.as_micros(), i.kind.as_str(), m)
            })
            .collect(),
        swaps: out.swap_count,
    };
    if got != expected {
        return Err(format!("engine {got:#?}\nreplay {expected:#?}\ninstance {inst:#?}"));
    }
    out.timeline.check_partition().map_err(|e| e.to_string())
}

#[derive(Debug, Default)]
pub struct Coverage {
    pub instances: usize,
    pub batches: usize,
    pub multi_swap: usize,
    pub kinds: std::collections::BTreeSet<StrategyKind>,
}

/// Checks `n` random instances, alternating the execution mode.
pub fn check_random(n: usize, seed: u64) -> Result<Coverage, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = Coverage::default();
    for i in 0..n {
        let inst = random_instance(&mut rng);
        let mode = if i % 2 == 0 { ExecMode::Cc } else { ExecMode::NoCc };
        check(&inst, mode)?;
        let r = replay(&inst);
        cov.instances += 1;
        cov.batches += r.batches.len();
        cov.multi_swap += usize::from(r.swaps >= 2);
        cov.kinds.insert(inst.kind);
    }
    Ok(cov)
}

/// Two models, four requests, best batch without timers, No-CC.
pub fn hand_scenario() -> Instance {
    let model = |name: &str| Model {
        name: name.into(),
        proc: vec![4 * US, 6 * US],
        load: 10 * US,
        unload: 10_000,
    };
    Instance {
        models: vec![model("A"), model("B")],
        arrivals: vec![(0, 0), (5 * US, 0), (6 * US, 1), (7 * US, 1)],
        kind: StrategyKind::BestBatch,
        sla: 60 * US,
        margin: US,
        window: 60 * US,
        default_rate: 1.0,
        drain: false,
        run_length: 100 * US,
    }
}
