use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{ExecMode, ModelId, SlaPolicy, TimeSpan};
use crate::engine::SimParams;
use crate::error::{Error, Result};
use crate::metrics::CellMeta;
use crate::profiles::CostModel;
use crate::scheduler::{Strategy, StrategyKind};
use crate::traffic::{ArrivalTrace, Pattern, PatternParams, TrafficSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    pub timer_margin_s: f64,
    pub rate_window_s: f64,
    pub default_rate_rps: f64,
    pub drain_at_end: bool,
}

impl Default for StrategyParams {
    fn default() -> Self {
        let s = Strategy::new(StrategyKind::BestBatch);
        StrategyParams {
            timer_margin_s: s.timer_margin.as_secs_f64(),
            rate_window_s: s.rate_window.as_secs_f64(),
            default_rate_rps: s.default_rate_rps,
            drain_at_end: s.drain_at_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub pattern: Pattern,
    pub mean_rps: f64,
    #[serde(default = "default_duration_s")]
    pub duration_s: f64,
    #[serde(default)]
    pub params: PatternParams,
    /// `[model, weight]` pairs; empty means uniform over the cost model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub model_mix: Vec<(String, f64)>,
}

fn default_duration_s() -> f64 {
    1200.0
}

fn default_seed() -> u64 {
    1
}

/// Lists spanning an experiment grid. Missing lists default to the full
/// strategy/pattern/mode sets, means {2, 4, 8} rps, SLAs {40, 60, 80} s and
/// seeds 1..=5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub strategies: Vec<StrategyKind>,
    pub patterns: Vec<Pattern>,
    pub means: Vec<f64>,
    pub slas: Vec<f64>,
    pub modes: Vec<ExecMode>,
    pub seeds: Vec<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            strategies: StrategyKind::ALL.to_vec(),
            patterns: Pattern::ALL.to_vec(),
            means: vec![2.0, 4.0, 8.0],
            slas: vec![40.0, 60.0, 80.0],
            modes: ExecMode::ALL.to_vec(),
            seeds: (1..=5).collect(),
        }
    }
}

/// One experiment cell as read from a JSON run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Cost-model JSON path, relative to the config file.
    pub cost_model: PathBuf,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub strategy_params: StrategyParams,
    pub traffic: TrafficConfig,
    pub sla_s: f64,
    pub mode: ExecMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_length_s: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Replay this arrival trace CSV instead of generating traffic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// Sweep grid; ignored by single runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
}

impl RunConfig {
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.cost_model = resolve(base_dir, &cfg.cost_model);
        cfg.trace = cfg.trace.map(|t| resolve(base_dir, &t));
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json_str(&text, base).map_err(|e| match e {
            Error::Config { key, reason } => Error::Config {
                key,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_length(&self) -> f64 {
        self.run_length_s.unwrap_or(self.traffic.duration_s)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        let p = &self.strategy_params;
        let span = |v: f64, key: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(TimeSpan::from_secs_f64(v))
            } else {
                Err(Error::config(
                    format!("strategy_params.{key}"),
                    format!("must be non-negative, got {v}"),
                ))
            }
        };
        let s = Strategy {
            kind: self.strategy,
            timer_margin: span(p.timer_margin_s, "timer_margin_s")?,
            rate_window: span(p.rate_window_s, "rate_window_s")?,
            default_rate_rps: p.default_rate_rps,
            drain_at_end: p.drain_at_end,
        };
        s.validate().map_err(|e| rekey(e, "strategy_params"))?;
        Ok(s)
    }

    pub fn sla(&self) -> Result<SlaPolicy> {
        SlaPolicy::from_secs_f64(self.sla_s).map_err(|e| rekey(e, ""))
    }

    /// Traffic spec with the model mix resolved against `cost_model`.
    pub fn traffic_spec(&self, cost_model: &CostModel) -> Result<TrafficSpec> {
        let t = &self.traffic;
        if !(t.duration_s.is_finite() && t.duration_s > 0.0) {
            return Err(Error::config(
                "traffic.duration_s",
                format!("must be positive, got {}", t.duration_s),
            ));
        }
        let duration = TimeSpan::from_secs_f64(t.duration_s);
        let spec = if t.model_mix.is_empty() {
            let mut s = TrafficSpec::uniform(t.pattern, t.mean_rps, duration, &cost_model.model_ids());
            s.params = t.params;
            s
        } else {
            let mut mix = Vec::with_capacity(t.model_mix.len());
            for (name, w) in &t.model_mix {
                let id = ModelId::new(name);
                if !cost_model.contains(&id) {
                    return Err(Error::config(
                        "traffic.model_mix",
                        format!("model `{name}` is not in the cost model"),
                    ));
                }
                mix.push((id, *w));
            }
            TrafficSpec {
                pattern: t.pattern,
                mean_rps: t.mean_rps,
                duration,
                params: t.params,
                model_mix: mix,
            }
        };
        spec.validate().map_err(|e| rekey(e, "traffic"))?;
        Ok(spec)
    }

    pub fn sim_params(&self, seed: u64) -> Result<SimParams> {
        let rl = self.run_length();
        if !(rl.is_finite() && rl > 0.0) {
            return Err(Error::config("run_length_s", format!("must be positive, got {rl}")));
        }
        Ok(SimParams {
            strategy: self.strategy()?,
            sla: self.sla()?,
            mode: self.mode,
            seed,
            run_length: TimeSpan::from_secs_f64(rl),
        })
    }

    pub fn meta(&self, seed: u64) -> Result<CellMeta> {
        Ok(CellMeta {
            strategy: self.strategy,
            pattern: self.traffic.pattern,
            mean_rps: self.traffic.mean_rps,
            sla: self.sla()?,
            mode: self.mode,
            seed,
        })
    }

    pub fn load_cost_model(&self) -> Result<Arc<CostModel>> {
        if !self.cost_model.exists() {
            return Err(Error::config(
                "cost_model",
                format!("file `{}` does not exist", self.cost_model.display()),
            ));
        }
        CostModel::load(&self.cost_model).map(Arc::new)
    }

    /// Generated (or replayed) arrival trace for this config.
    pub fn arrival_trace(&self, cost_model: &CostModel, seed: u64) -> Result<ArrivalTrace> {
        let spec = self.traffic_spec(cost_model)?;
        match &self.trace {
            Some(path) => {
                let trace = ArrivalTrace::read_csv(path, Some(spec.duration))?;
                if let Some(a) = trace.arrivals.iter().find(|a| !cost_model.contains(&a.model)) {
                    return Err(Error::config(
                        "trace",
                        format!("model `{}` is not in the cost model", a.model),
                    ));
                }
                Ok(trace)
            }
            None => spec.generate(seed),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Turns a parameter error into a config error carrying the config key.
fn rekey(e: Error, prefix: &str) -> Error {
    match e {
        Error::Parameter { name, reason } => {
            let key = if prefix.is_empty() {
                name.to_owned()
            } else if prefix == "traffic" && name != "mean_rps" && name != "duration_s" && name != "model_mix" {
                format!("traffic.params.{name}")
            } else {
                format!("{prefix}.{name}")
            };
            Error::Config { key, reason }
        }
        other => other,
    }
}
