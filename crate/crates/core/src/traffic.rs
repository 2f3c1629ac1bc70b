//! Arrival-trace generation.
//!
//! Three arrival shapes are supported, all parameterised so that the long-run
//! mean request rate equals the requested `mean_rps`:
//!
//! * **gamma**: i.i.d. gamma inter-arrival gaps with shape `k` and scale
//!   `1 / (mean_rps * k)`. Shapes below one give clustered arrivals.
//! * **bursty**: time is tiled into windows of `burst_period`; the first
//!   `burst_duty` fraction of each window is a Poisson burst at
//!   `mean_rps / burst_duty`, the rest is silent.
//! * **ramp**: inhomogeneous Poisson with a triangular rate that peaks at
//!   `2 * mean_rps` at `ramp_peak_fraction * duration`, sampled by thinning.
//!
//! Generated times are floored to whole microseconds. Model assignment is a
//! separate seeded pass over the arrival times.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::domain::{ModelId, TimePoint, TimeSpan};
use crate::error::{Error, Result};
use crate::rng::{stream, substream, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Gamma,
    Bursty,
    Ramp,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Gamma, Pattern::Bursty, Pattern::Ramp];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Gamma => "gamma",
            Pattern::Bursty => "bursty",
            Pattern::Ramp => "ramp",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(Pattern::Gamma),
            "bursty" => Ok(Pattern::Bursty),
            "ramp" => Ok(Pattern::Ramp),
            _ => Err(Error::param(
                "pattern",
                format!("expected gamma, bursty or ramp, got `{s}`"),
            )),
        }
    }
}

/// Pattern-specific shape parameters. Only the ones relevant to the chosen
/// pattern are consulted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternParams {
    pub gamma_shape: f64,
    pub burst_period_s: f64,
    pub burst_duty: f64,
    pub ramp_peak_fraction: f64,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            gamma_shape: 0.5,
            burst_period_s: 120.0,
            burst_duty: 0.25,
            ramp_peak_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub pattern: Pattern,
    pub mean_rps: f64,
    pub duration: TimeSpan,
    pub params: PatternParams,
    pub model_mix: Vec<(ModelId, f64)>,
}

impl TrafficSpec {
    /// Spec with default pattern parameters and a uniform mix over `models`.
    pub fn uniform(pattern: Pattern, mean_rps: f64, duration: TimeSpan, models: &[ModelId]) -> Self {
        let w = 1.0 / models.len().max(1) as f64;
        TrafficSpec {
            pattern,
            mean_rps,
            duration,
            params: PatternParams::default(),
            model_mix: models.iter().map(|m| (m.clone(), w)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate_and_duration(self.mean_rps, self.duration)?;
        match self.pattern {
            Pattern::Gamma => check_shape(self.params.gamma_shape)?,
            Pattern::Bursty => check_burst(self.duration, self.params.burst_period_s, self.params.burst_duty)?,
            Pattern::Ramp => check_peak(self.params.ramp_peak_fraction)?,
        }
        check_mix(&self.model_mix)
    }

    /// Generates arrival times for the pattern and assigns models, both from
    /// sub-streams of `seed`.
    pub fn generate(&self, seed: u64) -> Result<ArrivalTrace> {
        self.validate()?;
        let p = &self.params;
        let times = match self.pattern {
            Pattern::Gamma => gen_gamma(self.mean_rps, self.duration, p.gamma_shape, seed)?,
            Pattern::Bursty => gen_bursty(
                self.mean_rps,
                self.duration,
                TimeSpan::from_secs_f64(p.burst_period_s),
                p.burst_duty,
                seed,
            )?,
            Pattern::Ramp => gen_ramp(self.mean_rps, self.duration, p.ramp_peak_fraction, seed)?,
        };
        assign_models(&times, &self.model_mix, seed)
    }
}

/// Arrival instants before any model is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalTimes {
    pub times: Vec<TimePoint>,
    pub duration: TimeSpan,
    pub seed: u64,
}

impl ArrivalTimes {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn realized_mean(&self) -> f64 {
        realized_mean(self.times.len(), self.duration)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    pub at: TimePoint,
    pub model: ModelId,
}

/// Sorted arrivals with their target models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalTrace {
    pub arrivals: Vec<Arrival>,
    pub duration: TimeSpan,
    pub seed: u64,
}

impl ArrivalTrace {
    pub fn empty(duration: TimeSpan) -> Self {
        ArrivalTrace {
            arrivals: Vec::new(),
            duration,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Arrivals per second over the trace duration.
    pub fn realized_mean(&self) -> f64 {
        realized_mean(self.arrivals.len(), self.duration)
    }

    /// Arrival counts over `bins` equal-width bins of the trace duration.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut counts = vec![0; bins];
        let d = self.duration.as_micros().max(1) as u128;
        for a in &self.arrivals {
            let idx = (a.at.as_micros() as u128 * bins as u128 / d) as usize;
            counts[idx.min(bins - 1)] += 1;
        }
        counts
    }

    /// Writes `arrival_s,model` rows, seconds with six decimals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::output(path, csv_io(e)))?;
        let res: csv::Result<()> = (|| {
            w.write_record(["arrival_s", "model"])?;
            for a in &self.arrivals {
                w.write_record([a.at.to_string().as_str(), a.model.as_str()])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::output(path, csv_io(e)))
    }

    /// Reads a trace written by [`ArrivalTrace::write_csv`]. Without an
    /// explicit `duration`, the trace ends one microsecond after its last arrival.
    pub fn read_csv(path: &Path, duration: Option<TimeSpan>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::input(path, e))?;
        let headers = r.headers().map_err(|e| Error::input(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["arrival_s", "model"] {
            return Err(Error::input(path, "expected header `arrival_s,model`"));
        }
        let mut arrivals = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::input(path, e))?;
            let at: TimePoint = rec[0]
                .parse()
                .map_err(|e| Error::input(path, format!("row {}: {e}", i + 1)))?;
            if rec[1].is_empty() {
                return Err(Error::input(path, format!("row {}: empty model", i + 1)));
            }
            if arrivals.last().is_some_and(|p: &Arrival| p.at > at) {
                return Err(Error::input(path, format!("row {}: arrivals not sorted", i + 1)));
            }
            arrivals.push(Arrival {
                at,
                model: ModelId::new(&rec[1]),
            });
        }
        let duration = match duration {
            Some(d) => {
                if let Some(last) = arrivals.last() {
                    if last.at.as_micros() >= d.as_micros() {
                        return Err(Error::input(path, "arrival at or after the run duration"));
                    }
                }
                d
            }
            None => TimeSpan::from_micros(arrivals.last().map_or(1, |a| a.at.as_micros() + 1)),
        };
        Ok(ArrivalTrace {
            arrivals,
            duration,
            seed: 0,
        })
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

pub fn realized_mean(count: usize, duration: TimeSpan) -> f64 {
    if count == 0 || duration.is_zero() {
        return 0.0;
    }
    count as f64 / duration.as_secs_f64()
}

fn check_rate_and_duration(mean_rps: f64, duration: TimeSpan) -> Result<()> {
    if !(mean_rps.is_finite() && mean_rps > 0.0) {
        return Err(Error::param("mean_rps", format!("must be positive, got {mean_rps}")));
    }
    if duration.is_zero() {
        return Err(Error::param("duration_s", "must be positive"));
    }
    Ok(())
}

fn check_shape(shape: f64) -> Result<()> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(Error::param("gamma_shape", format!("must be positive, got {shape}")));
    }
    Ok(())
}

fn check_burst(duration: TimeSpan, period_s: f64, duty: f64) -> Result<()> {
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(Error::param("burst_duty", format!("must lie in (0, 1], got {duty}")));
    }
    let period = TimeSpan::from_secs_f64(period_s.max(0.0));
    if !(period_s.is_finite() && period_s > 0.0) || period.is_zero() || period > duration {
        return Err(Error::param(
            "burst_period_s",
            format!("must lie in (0, duration], got {period_s}"),
        ));
    }
    Ok(())
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak < 1.0) {
        return Err(Error::param(
            "ramp_peak_fraction",
            format!("must lie in (0, 1), got {peak}"),
        ));
    }
    Ok(())
}

fn check_mix(mix: &[(ModelId, f64)]) -> Result<()> {
    if mix.is_empty() {
        return Err(Error::param("model_mix", "must name at least one model"));
    }
    if let Some((m, w)) = mix.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::param("model_mix", format!("weight {w} for `{m}` is invalid")));
    }
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::param("model_mix", format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn floor_micros(secs: f64) -> u64 {
    (secs * 1e6).floor() as u64
}

/// Gamma-distributed inter-arrival gaps with mean `1 / mean_rps`.
pub fn gen_gamma(mean_rps: f64, duration: TimeSpan, shape: f64, seed: u64) -> Result<ArrivalTimes> {
    check_rate_and_duration(mean_rps, duration)?;
    check_shape(shape)?;
    let scale = 1.0 / (mean_rps * shape);
    let gap = Gamma::new(shape, scale).map_err(|e| Error::param("gamma_shape", e.to_string()))?;
    let mut rng = substream(seed, stream::ARRIVALS);
    let end = duration.as_micros();
    let mut times = Vec::with_capacity((mean_rps * duration.as_secs_f64() * 1.1) as usize);
    let mut t = 0.0_f64;
    loop {
        t += gap.sample(&mut rng);
        let m = floor_micros(t);
        if m >= end {
            break;
        }
        times.push(TimePoint::from_micros(m));
    }
    Ok(ArrivalTimes { times, duration, seed })
}

/// On/off Poisson bursts tiled with period `period`.
pub fn gen_bursty(mean_rps: f64, duration: TimeSpan, period: TimeSpan, duty: f64, seed: u64) -> Result<ArrivalTimes> {
    check_rate_and_duration(mean_rps, duration)?;
    check_burst(duration, period.as_secs_f64(), duty)?;
    let gap = Exp::new(mean_rps / duty).map_err(|e| Error::param("mean_rps", e.to_string()))?;
    let mut rng = substream(seed, stream::ARRIVALS);
    let burst_len = ((period.as_micros() as f64) * duty).round() as u64;
    let end = duration.as_micros();
    let mut times = Vec::with_capacity((mean_rps * duration.as_secs_f64() * 1.1) as usize);
    let mut start = 0u64;
    while start < end {
        let burst_end = (start + burst_len).min(end);
        let mut t = start as f64 / 1e6;
        loop {
            t += gap.sample(&mut rng);
            let m = floor_micros(t);
            if m >= burst_end {
                break;
            }
            times.push(TimePoint::from_micros(m));
        }
        start += period.as_micros();
    }
    Ok(ArrivalTimes { times, duration, seed })
}

/// Triangular-rate inhomogeneous Poisson process sampled by thinning.
pub fn gen_ramp(mean_rps: f64, duration: TimeSpan, peak_fraction: f64, seed: u64) -> Result<ArrivalTimes> {
    check_rate_and_duration(mean_rps, duration)?;
    check_peak(peak_fraction)?;
    let peak_rate = 2.0 * mean_rps;
    let gap = Exp::new(peak_rate).map_err(|e| Error::param("mean_rps", e.to_string()))?;
    let mut rng = substream(seed, stream::ARRIVALS);
    let total = duration.as_secs_f64();
    let peak_at = peak_fraction * total;
    let end = duration.as_micros();
    let mut times = Vec::with_capacity((mean_rps * total * 1.1) as usize);
    let mut t = 0.0_f64;
    loop {
        t += gap.sample(&mut rng);
        let m = floor_micros(t);
        if m >= end {
            break;
        }
        let relative = if t < peak_at {
            t / peak_at
        } else {
            (total - t) / (total - peak_at)
        };
        if rng.random::<f64>() < relative {
            times.push(TimePoint::from_micros(m));
        }
    }
    Ok(ArrivalTimes { times, duration, seed })
}

/// Attaches a model to each arrival, independently with probability equal to
/// its weight in `mix`.
pub fn assign_models(times: &ArrivalTimes, mix: &[(ModelId, f64)], seed: u64) -> Result<ArrivalTrace> {
    check_mix(mix)?;
    let arrivals = if mix.len() == 1 {
        let m = &mix[0].0;
        times.times.iter().map(|&at| Arrival { at, model: m.clone() }).collect()
    } else {
        let index =
            WeightedIndex::new(mix.iter().map(|(_, w)| *w)).map_err(|e| Error::param("model_mix", e.to_string()))?;
        let mut rng: SimRng = substream(seed, stream::ASSIGN);
        times
            .times
            .iter()
            .map(|&at| Arrival {
                at,
                model: mix[index.sample(&mut rng)].0.clone(),
            })
            .collect()
    };
    Ok(ArrivalTrace {
        arrivals,
        duration: times.duration,
        seed: times.seed,
    })
}
