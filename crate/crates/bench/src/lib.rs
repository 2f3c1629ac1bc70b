//! Fixtures shared by the criterion benches under `benches/`.

use std::path::PathBuf;

use relaxsim::engine::SimParams;
use relaxsim::profiles::load_cost_model;
use relaxsim::{ArrivalTrace, CostModel, ExecMode, Pattern, SlaPolicy, Strategy, StrategyKind, TimeSpan, TrafficSpec};

/// The shipped H100 calibration.
pub fn calibration() -> CostModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/h100_calibration.json");
    load_cost_model(&path).expect("shipped calibration loads")
}

/// A full-length run's traffic over the calibration's models.
pub fn trace(cm: &CostModel, pattern: Pattern, mean_rps: f64, seed: u64) -> ArrivalTrace {
    TrafficSpec::uniform(pattern, mean_rps, TimeSpan::from_secs(1200), &cm.model_ids())
        .generate(seed)
        .expect("valid traffic spec")
}

pub fn params(kind: StrategyKind, mode: ExecMode, sla_s: f64) -> SimParams {
    SimParams {
        strategy: Strategy::new(kind),
        sla: SlaPolicy::from_secs_f64(sla_s).expect("positive sla"),
        mode,
        seed: 1,
        run_length: TimeSpan::from_secs(1200),
    }
}
