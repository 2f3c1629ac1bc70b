//! Calibration data: model load/unload time distributions per execution mode
//! and batch-size to processing-time curves.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::domain::{ExecMode, ModelId, TimeSpan};
use crate::error::{Error, Result};

pub const DEFAULT_TOKEN_LEN: u32 = 50;

/// Draws above this many rejections fall back to the truncation floor.
const MAX_REJECTIONS: usize = 64;

/// Load/unload duration distributions for one model in one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadProfile {
    pub load_mean: TimeSpan,
    pub load_std: TimeSpan,
    pub unload_mean: TimeSpan,
    pub unload_std: TimeSpan,
}

impl LoadProfile {
    /// Zero-variance profile.
    pub fn fixed(load: TimeSpan, unload: TimeSpan) -> Self {
        LoadProfile {
            load_mean: load,
            load_std: TimeSpan::ZERO,
            unload_mean: unload,
            unload_std: TimeSpan::ZERO,
        }
    }

    pub fn sample_load<R: Rng + ?Sized>(&self, rng: &mut R) -> TimeSpan {
        sample_truncated(self.load_mean, self.load_std, rng)
    }

    pub fn sample_unload<R: Rng + ?Sized>(&self, rng: &mut R) -> TimeSpan {
        sample_truncated(self.unload_mean, self.unload_std, rng)
    }
}

/// Normal(mean, std) truncated below at mean / 10, by rejection.
fn sample_truncated<R: Rng + ?Sized>(mean: TimeSpan, std: TimeSpan, rng: &mut R) -> TimeSpan {
    if std.is_zero() {
        return mean;
    }
    let m = mean.as_micros() as f64;
    let floor = m / 10.0;
    let normal = Normal::new(m, std.as_micros() as f64).expect("finite std");
    for _ in 0..MAX_REJECTIONS {
        let x = normal.sample(rng);
        if x >= floor {
            return TimeSpan::from_micros(x.round() as u64);
        }
    }
    TimeSpan::from_micros(floor.round() as u64)
}

/// Profiled processing time per batch size. Sizes and times are strictly
/// increasing and the curve starts at batch size 1; the largest size is the
/// out-of-memory boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchCurve {
    points: Vec<(u32, TimeSpan)>,
}

impl BatchCurve {
    pub fn new(points: Vec<(u32, TimeSpan)>) -> Result<Self> {
        validate_curve(&points, "curve")?;
        Ok(BatchCurve { points })
    }

    pub fn points(&self) -> &[(u32, TimeSpan)] {
        &self.points
    }

    pub fn max_batch(&self) -> u32 {
        self.points.last().expect("non-empty curve").0
    }

    /// Optimal batch size: the profiled size with the highest
    /// `size / processing_time`, smaller size on ties.
    pub fn obs(&self) -> u32 {
        let mut best = self.points[0];
        for &(size, time) in &self.points[1..] {
            // size / time > best.0 / best.1, cross-multiplied to stay exact
            if u128::from(size) * u128::from(best.1.as_micros()) > u128::from(best.0) * u128::from(time.as_micros()) {
                best = (size, time);
            }
        }
        best.0
    }

    /// Requests per second at the optimal batch size.
    pub fn peak_throughput(&self) -> f64 {
        let obs = self.obs();
        let t = self.processing_time(obs).expect("obs is profiled");
        obs as f64 / t.as_secs_f64()
    }

    /// Processing time for `size`, exact at profiled sizes and linearly
    /// interpolated (rounded to the nearest microsecond) in between.
    pub fn processing_time(&self, size: u32) -> Result<TimeSpan> {
        if size < 1 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        match self.points.binary_search_by_key(&size, |p| p.0) {
            Ok(i) => Ok(self.points[i].1),
            Err(i) if i == self.points.len() => Err(Error::OomBoundary {
                model: String::new(),
                size,
                max_batch: self.max_batch(),
            }),
            Err(i) => {
                // i > 0 because the curve contains size 1
                let (s0, t0) = self.points[i - 1];
                let (s1, t1) = self.points[i];
                let (t0, t1) = (t0.as_micros() as u128, t1.as_micros() as u128);
                let num = (t1 - t0) * u128::from(size - s0);
                let den = u128::from(s1 - s0);
                Ok(TimeSpan::from_micros((t0 + (num + den / 2) / den) as u64))
            }
        }
    }
}

fn validate_curve(points: &[(u32, TimeSpan)], path: &str) -> Result<()> {
    let Some(&(first, _)) = points.first() else {
        return Err(Error::schema(path, "curve has no points"));
    };
    if first != 1 {
        return Err(Error::schema(format!("{path}[0]"), "curve must start at batch size 1"));
    }
    for (i, &(_, t)) in points.iter().enumerate() {
        if t.is_zero() {
            return Err(Error::schema(
                format!("{path}[{i}]"),
                "processing time must be positive",
            ));
        }
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(Error::schema(
                format!("{path}[{}]", i + 1),
                "batch sizes must be strictly increasing",
            ));
        }
        if w[1].1 <= w[0].1 {
            return Err(Error::schema(
                format!("{path}[{}]", i + 1),
                "processing time must strictly increase with batch size",
            ));
        }
    }
    Ok(())
}

/// Calibration for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub id: ModelId,
    pub size_gb: f64,
    pub curve: BatchCurve,
    pub cc: LoadProfile,
    pub nocc: LoadProfile,
}

impl ModelProfile {
    pub fn load_profile(&self, mode: ExecMode) -> &LoadProfile {
        match mode {
            ExecMode::Cc => &self.cc,
            ExecMode::NoCc => &self.nocc,
        }
    }
}

/// Immutable calibration for every model a run may reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    models: Vec<ModelProfile>,
    index: HashMap<ModelId, usize>,
    pub token_len: u32,
}

impl CostModel {
    pub fn new(models: Vec<ModelProfile>) -> Result<Self> {
        let mut index = HashMap::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            if index.insert(m.id.clone(), i).is_some() {
                return Err(Error::schema(
                    format!("models[{i}].name"),
                    format!("duplicate model `{}`", m.id),
                ));
            }
        }
        if models.is_empty() {
            return Err(Error::schema("models", "at least one model is required"));
        }
        Ok(CostModel {
            models,
            index,
            token_len: DEFAULT_TOKEN_LEN,
        })
    }

    /// Models in file order.
    pub fn models(&self) -> &[ModelProfile] {
        &self.models
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn get(&self, id: &ModelId) -> Result<&ModelProfile> {
        self.index
            .get(id)
            .map(|&i| &self.models[i])
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn contains(&self, id: &ModelId) -> bool {
        self.index.contains_key(id)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawCostModel = serde_json::from_str(text).map_err(|e| Error::schema("$", e.to_string()))?;
        raw.into_cost_model()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Schema { path: field, reason } => Error::Schema {
                path: format!("{}: {field}", path.display()),
                reason,
            },
            other => other,
        })
    }
}

/// Reads and validates a cost-model JSON file.
pub fn load_cost_model(path: &Path) -> Result<CostModel> {
    CostModel::load(path)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCostModel {
    models: Vec<RawModel>,
    #[serde(default)]
    token_len: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    #[serde(default)]
    size_gb: f64,
    curve: Vec<(u32, f64)>,
    cc: Option<RawLoad>,
    nocc: Option<RawLoad>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    load_mean_s: f64,
    load_std_s: f64,
    unload_mean_s: f64,
    unload_std_s: f64,
}

fn seconds(v: f64, path: &str, positive: bool) -> Result<TimeSpan> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::schema(
            path,
            format!("time must be a non-negative number, got {v}"),
        ));
    }
    let span = TimeSpan::from_secs_f64(v);
    if positive && span.is_zero() {
        return Err(Error::schema(path, "time must be positive"));
    }
    Ok(span)
}

impl RawLoad {
    fn validate(&self, path: &str) -> Result<LoadProfile> {
        Ok(LoadProfile {
            load_mean: seconds(self.load_mean_s, &format!("{path}.load_mean_s"), true)?,
            load_std: seconds(self.load_std_s, &format!("{path}.load_std_s"), false)?,
            unload_mean: seconds(self.unload_mean_s, &format!("{path}.unload_mean_s"), true)?,
            unload_std: seconds(self.unload_std_s, &format!("{path}.unload_std_s"), false)?,
        })
    }
}

impl RawCostModel {
    fn into_cost_model(self) -> Result<CostModel> {
        let mut models = Vec::with_capacity(self.models.len());
        for (i, m) in self.models.into_iter().enumerate() {
            let base = format!("models[{i}]");
            if m.name.trim().is_empty() {
                return Err(Error::schema(format!("{base}.name"), "model name is empty"));
            }
            let mut points = Vec::with_capacity(m.curve.len());
            for (j, &(size, t)) in m.curve.iter().enumerate() {
                points.push((size, seconds(t, &format!("{base}.curve[{j}]"), true)?));
            }
            validate_curve(&points, &format!("{base}.curve"))?;
            let missing = |mode: &str| {
                Error::schema(
                    format!("{base}.{mode}"),
                    format!("model `{}` has no {mode} load profile", m.name),
                )
            };
            let cc =
                m.cc.as_ref()
                    .ok_or_else(|| missing("cc"))?
                    .validate(&format!("{base}.cc"))?;
            let nocc = m
                .nocc
                .as_ref()
                .ok_or_else(|| missing("nocc"))?
                .validate(&format!("{base}.nocc"))?;
            models.push(ModelProfile {
                id: ModelId::new(&m.name),
                size_gb: m.size_gb,
                curve: BatchCurve { points },
                cc,
                nocc,
            });
        }
        let mut cm = CostModel::new(models)?;
        if let Some(t) = self.token_len {
            cm.token_len = t;
        }
        Ok(cm)
    }
}
