//! Discrete-event simulation of relaxed batch inference on a single GPU that
//! serves several models one at a time.
//!
//! The crate is organised bottom-up:
//!
//! * [`domain`]: virtual time, requests, execution mode and SLA policy.
//! * [`traffic`]: seeded arrival-trace generators (gamma, bursty, ramp).
//! * [`profiles`]: calibration data (load/unload distributions, batch curves).
//! * [`scheduler`]: per-model FIFO queues and the batching strategies.
//! * [`engine`]: the event loop driving a single-GPU state machine.
//! * [`metrics`]: run summaries and CSV outputs.
//! * [`harness`]: run configs, experiment sweeps and CC/No-CC comparisons.

pub mod domain;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod profiles;
pub mod rng;
pub mod scheduler;
pub mod traffic;

pub use domain::{ExecMode, ModelId, Request, SlaPolicy, TimePoint, TimeSpan};
pub use engine::{run, Backend, GpuState, RunOutput, SimulatedBackend, Timeline};
pub use error::{Error, Result};
pub use metrics::{BatchRecord, RequestRecord, RunSummary};
pub use profiles::{BatchCurve, CostModel, LoadProfile};
pub use scheduler::{Decision, Strategy, StrategyKind};
pub use traffic::{ArrivalTrace, Pattern, TrafficSpec};
