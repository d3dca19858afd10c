//! The System Under Test contract and its simulated implementations.
//!
//! A run walks the SUT through configure, load, issue (repeatedly), flush and
//! unload. Completions are delivered asynchronously through a
//! [`CompletionSink`], from any thread.

pub mod conformance;
pub mod endpoint;
pub mod sim;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::clock::Clock;
use crate::engine::Query;
use crate::profiles::Mode;
use crate::store::SampleStore;

pub use endpoint::{open_sut, parse_endpoint, Endpoint};
pub use sim::{simulate_latency, LatencyModel, SimulatedSut, SimulatedSutConfig};

#[derive(Debug, Error)]
pub enum SutError {
    #[error("query issued before samples were loaded")]
    NotLoaded,
    #[error("sample index {0} is not loaded")]
    UnknownSample(usize),
    #[error("invalid SUT configuration: {0}")]
    Config(String),
    #[error("remote SUT reported: {0}")]
    Remote(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection error: {0}")]
    Io(#[from] std::io::Error),
    #[error("SUT failed: {0}")]
    Failed(String),
}

/// What the harness tells the SUT before loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SutRunConfig {
    pub profile: String,
    pub mode: Mode,
    pub inputs_per_query: usize,
    pub store_size: usize,
    pub sample_bytes: usize,
}

/// Receiver side of completions. The engine's recorder implements this; so
/// does the loopback stub, which forwards completions over the wire.
pub trait CompletionTarget: Send + Sync {
    fn clock(&self) -> &dyn Clock;
    fn deliver(&self, query_id: u64, completion_ns: u64, response: Vec<u8>);
    fn fail(&self, reason: String);
}

#[derive(Clone)]
pub struct CompletionSink(Arc<dyn CompletionTarget>);

impl CompletionSink {
    pub fn new(target: Arc<dyn CompletionTarget>) -> Self {
        Self(target)
    }

    /// Reports a completion stamped with the current clock reading.
    pub fn complete(&self, query_id: u64, response: Vec<u8>) {
        let now = self.0.clock().now_ns();
        self.0.deliver(query_id, now, response);
    }

    /// Reports a completion at an explicit time. Used by simulated SUTs
    /// under a simulated clock.
    pub fn complete_at(&self, query_id: u64, completion_ns: u64, response: Vec<u8>) {
        self.0.deliver(query_id, completion_ns, response);
    }

    pub fn fail(&self, reason: impl Into<String>) {
        self.0.fail(reason.into());
    }

    pub fn clock(&self) -> &dyn Clock {
        self.0.clock()
    }
}

impl fmt::Debug for CompletionSink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompletionSink").finish_non_exhaustive()
    }
}

pub trait SutContract: Send {
    fn name(&self) -> &str;

    fn configure(&mut self, _config: &SutRunConfig) -> Result<(), SutError> {
        Ok(())
    }

    /// Brings `indices` of `store` into SUT memory. Must precede `issue`.
    fn load_samples(&mut self, store: &Arc<SampleStore>, indices: &[usize]) -> Result<(), SutError>;

    fn unload(&mut self) -> Result<(), SutError>;

    /// Starts processing `query`; exactly one completion for it must reach
    /// `sink` eventually. Must not wait for the query to finish.
    fn issue(&mut self, query: &Query, sink: &CompletionSink) -> Result<(), SutError>;

    /// Blocks until every issued query has been delivered.
    fn flush(&mut self) -> Result<(), SutError>;
}

impl<T: SutContract + ?Sized> SutContract for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn configure(&mut self, config: &SutRunConfig) -> Result<(), SutError> {
        (**self).configure(config)
    }
    fn load_samples(&mut self, store: &Arc<SampleStore>, indices: &[usize]) -> Result<(), SutError> {
        (**self).load_samples(store, indices)
    }
    fn unload(&mut self) -> Result<(), SutError> {
        (**self).unload()
    }
    fn issue(&mut self, query: &Query, sink: &CompletionSink) -> Result<(), SutError> {
        (**self).issue(query, sink)
    }
    fn flush(&mut self) -> Result<(), SutError> {
        (**self).flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    HardenedSystem,
    DevelopmentSystem,
    EngineeringSample,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::HardenedSystem => "hardened_system",
            Category::DevelopmentSystem => "development_system",
            Category::EngineeringSample => "engineering_sample",
        }
    }

    /// Required (functional_safety, publicly_available, auditable_closed).
    pub fn required_flags(self) -> (bool, bool, bool) {
        match self {
            Category::HardenedSystem => (true, true, true),
            Category::DevelopmentSystem => (false, true, true),
            Category::EngineeringSample => (false, false, false),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hardened_system" => Ok(Category::HardenedSystem),
            "development_system" => Ok(Category::DevelopmentSystem),
            "engineering_sample" => Ok(Category::EngineeringSample),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

/// Submitted system metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SutDescriptor {
    pub name: String,
    pub category: Category,
    pub functional_safety: bool,
    pub publicly_available: bool,
    pub auditable_closed: bool,
}

impl SutDescriptor {
    /// A descriptor whose flags match its category.
    pub fn new(name: impl Into<String>, category: Category) -> Self {
        let (functional_safety, publicly_available, auditable_closed) = category.required_flags();
        Self {
            name: name.into(),
            category,
            functional_safety,
            publicly_available,
            auditable_closed,
        }
    }

    /// Flags that disagree with the category, by name.
    pub fn category_violations(&self) -> Vec<&'static str> {
        let (fs, pa, ac) = self.category.required_flags();
        let mut out = Vec::new();
        if self.functional_safety != fs {
            out.push("functional_safety");
        }
        if self.publicly_available != pa {
            out.push("publicly_available");
        }
        if self.auditable_closed != ac {
            out.push("auditable_closed");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_table() {
        for c in [
            Category::HardenedSystem,
            Category::DevelopmentSystem,
            Category::EngineeringSample,
        ] {
            assert!(SutDescriptor::new("x", c).category_violations().is_empty());
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
        let mut d = SutDescriptor::new("x", Category::EngineeringSample);
        d.auditable_closed = true;
        assert_eq!(d.category_violations(), vec!["auditable_closed"]);
        let mut d = SutDescriptor::new("x", Category::HardenedSystem);
        d.functional_safety = false;
        assert_eq!(d.category_violations(), vec!["functional_safety"]);
    }
}
