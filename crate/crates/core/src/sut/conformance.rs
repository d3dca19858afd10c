//! Contract conformance suite shared by in-process and remote SUTs.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{CompletionSink, CompletionTarget, SutContract, SutRunConfig};
use crate::clock::{Clock, MonotonicClock, SimClock};
use crate::engine::Query;
use crate::profiles::Mode;
use crate::store::SampleStore;

/// Completion target that just records what it is given.
pub struct CollectingTarget {
    clock: Box<dyn Clock>,
    received: Mutex<Vec<(u64, u64, Vec<u8>)>>,
    failures: Mutex<Vec<String>>,
}

impl CollectingTarget {
    pub fn with_clock(clock: Box<dyn Clock>) -> (Arc<Self>, CompletionSink) {
        let target = Arc::new(Self {
            clock,
            received: Mutex::default(),
            failures: Mutex::default(),
        });
        let sink = CompletionSink::new(target.clone());
        (target, sink)
    }

    pub fn simulated() -> (Arc<Self>, CompletionSink) {
        Self::with_clock(Box::new(SimClock::new()))
    }

    pub fn real() -> (Arc<Self>, CompletionSink) {
        Self::with_clock(Box::new(MonotonicClock::new()))
    }

    /// Drains `(query_id, completion_ns, response)` in delivery order.
    pub fn take(&self) -> Vec<(u64, u64, Vec<u8>)> {
        std::mem::take(&mut *self.received.lock().unwrap())
    }

    pub fn failures(&self) -> Vec<String> {
        self.failures.lock().unwrap().clone()
    }
}

impl CompletionTarget for CollectingTarget {
    fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    fn deliver(&self, query_id: u64, completion_ns: u64, response: Vec<u8>) {
        self.received
            .lock()
            .unwrap()
            .push((query_id, completion_ns, response));
    }

    fn fail(&self, reason: String) {
        self.failures.lock().unwrap().push(reason);
    }
}

pub fn query(query_id: u64, sample_indices: Vec<usize>, issue_ns: u64) -> Query {
    Query {
        query_id,
        sample_indices,
        scheduled_ns: None,
        issue_ns,
    }
}

#[derive(Debug)]
pub struct ConformanceCase {
    pub name: &'static str,
    pub result: Result<(), String>,
}

fn run_config(store_size: usize) -> SutRunConfig {
    SutRunConfig {
        profile: "conformance".into(),
        mode: Mode::Performance,
        inputs_per_query: 1,
        store_size,
        sample_bytes: 32,
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn issue_before_load(sut: &mut dyn SutContract) -> Result<(), String> {
    sut.configure(&run_config(2)).map_err(|e| e.to_string())?;
    let (_, sink) = CollectingTarget::real();
    check(sut.issue(&query(0, vec![0], 0), &sink).is_err(), || {
        "issue before load_samples was accepted".into()
    })
}

fn one_completion(sut: &mut dyn SutContract) -> Result<(), String> {
    let store = Arc::new(SampleStore::synthetic(3, 2, 32));
    sut.configure(&run_config(2)).map_err(|e| e.to_string())?;
    sut.load_samples(&store, &[0, 1]).map_err(|e| e.to_string())?;
    let (target, sink) = CollectingTarget::real();
    sut.issue(&query(7, vec![1], sink.clock().now_ns()), &sink)
        .map_err(|e| e.to_string())?;
    sut.flush().map_err(|e| e.to_string())?;
    let got = target.take();
    sut.unload().map_err(|e| e.to_string())?;
    check(got.len() == 1 && got[0].0 == 7, || {
        format!("expected one completion for query 7, got {:?}", ids(&got))
    })
}

fn unknown_index(sut: &mut dyn SutContract) -> Result<(), String> {
    let store = Arc::new(SampleStore::synthetic(3, 3, 32));
    sut.configure(&run_config(3)).map_err(|e| e.to_string())?;
    sut.load_samples(&store, &[0, 1]).map_err(|e| e.to_string())?;
    let (_, sink) = CollectingTarget::real();
    let rejected = sut.issue(&query(0, vec![2], 0), &sink).is_err();
    sut.unload().map_err(|e| e.to_string())?;
    check(rejected, || "query over an unloaded index was accepted".into())
}

fn flush_conserves(sut: &mut dyn SutContract) -> Result<(), String> {
    const N: u64 = 25;
    let store = Arc::new(SampleStore::synthetic(3, 4, 32));
    sut.configure(&run_config(4)).map_err(|e| e.to_string())?;
    sut.load_samples(&store, &[0, 1, 2, 3]).map_err(|e| e.to_string())?;
    let (target, sink) = CollectingTarget::real();
    for id in 0..N {
        let q = query(id, vec![(id % 4) as usize], sink.clock().now_ns());
        sut.issue(&q, &sink).map_err(|e| e.to_string())?;
    }
    sut.flush().map_err(|e| e.to_string())?;
    let got = target.take();
    sut.unload().map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (id, _, _) in &got {
        *counts.entry(*id).or_default() += 1;
    }
    check(
        counts.len() == N as usize && counts.values().all(|&c| c == 1),
        || format!("after flush saw {} completions over ids {:?}", got.len(), counts),
    )
}

fn unload_then_issue(sut: &mut dyn SutContract) -> Result<(), String> {
    let store = Arc::new(SampleStore::synthetic(3, 1, 32));
    sut.configure(&run_config(1)).map_err(|e| e.to_string())?;
    sut.load_samples(&store, &[0]).map_err(|e| e.to_string())?;
    sut.unload().map_err(|e| e.to_string())?;
    let (_, sink) = CollectingTarget::real();
    check(sut.issue(&query(0, vec![0], 0), &sink).is_err(), || {
        "issue after unload was accepted".into()
    })
}

fn ids(got: &[(u64, u64, Vec<u8>)]) -> Vec<u64> {
    got.iter().map(|c| c.0).collect()
}

/// Runs every contract check, each against a fresh SUT from `make`.
pub fn run_suite<F>(mut make: F) -> Vec<ConformanceCase>
where
    F: FnMut() -> Box<dyn SutContract>,
{
    type Check = fn(&mut dyn SutContract) -> Result<(), String>;
    let cases: [(&'static str, Check); 5] = [
        ("issue_before_load", issue_before_load),
        ("one_completion_per_query", one_completion),
        ("unknown_index_rejected", unknown_index),
        ("flush_conserves_completions", flush_conserves),
        ("unload_then_issue", unload_then_issue),
    ];
    cases
        .into_iter()
        .map(|(name, f)| {
            let mut sut = make();
            ConformanceCase {
                name,
                result: f(sut.as_mut()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sut::{LatencyModel, SimulatedSut, SimulatedSutConfig};

    #[test]
    fn simulated_suts_conform() {
        for model in [
            LatencyModel::Fixed(200_000),
            LatencyModel::Uniform {
                lo_ns: 10_000,
                hi_ns: 500_000,
            },
        ] {
            let cases = run_suite(|| {
                Box::new(SimulatedSut::new("sim", SimulatedSutConfig::new(model.clone())).unwrap())
            });
            for c in cases {
                assert!(c.result.is_ok(), "{}: {:?}", c.name, c.result);
            }
        }
    }
}
