//! Benchmark harness for real-time inference systems.
//!
//! The harness drives a System Under Test (SUT) through Single Stream
//! (closed-loop) and Constant Stream (open-loop, fixed rate) scenarios,
//! measures order-statistic tail latency, gates accuracy relative to an FP32
//! reference, runs compliance checks, and validates submission bundles.
//!
//! Everything runs at desk scale: simulated SUTs, a synthetic sample store and
//! a simulated clock make every run reproducible.

pub mod cli;
pub mod clock;
pub mod compliance;
pub mod engine;
pub mod ipc;
pub mod metrics;
pub mod profiles;
pub mod report;
pub mod rng;
pub mod stats;
pub mod store;
pub mod sut;

pub use clock::{Clock, MonotonicClock, SimClock};
pub use engine::{Completion, Engine, Query, RunFailure, RunLog, TraceEntry};
pub use profiles::{builtin_profiles, BenchmarkProfile, Mode, RunSettings, Scenario};
pub use stats::{RunSummary, ValidityReport};
pub use store::SampleStore;
pub use sut::{SutContract, SutError};
