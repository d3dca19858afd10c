//! Load generation: query schedules, the Single Stream / Constant Stream /
//! accuracy drivers, and the completion recorder.
//!
//! A run follows the same steps whatever the scenario: configure the SUT,
//! load the sample store, issue queries, flush, unload. Times in the
//! returned [`RunLog`] are nanoseconds relative to the start of issuance.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};

use thiserror::Error;

use crate::clock::{Clock, MonotonicClock, SimClock};
use crate::profiles::{validate, BenchmarkProfile, Mode, RunSettings, Scenario, Violation};
use crate::rng::{fnv1a64, mix64, SplitMix64};
use crate::stats::{self, RunSummary, StatsError};
use crate::store::SampleStore;
use crate::sut::{CompletionSink, CompletionTarget, SutContract, SutError, SutRunConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: u64,
    pub sample_indices: Vec<usize>,
    /// Constant Stream only.
    pub scheduled_ns: Option<u64>,
    pub issue_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub query_id: u64,
    pub completion_ns: u64,
    pub response_digest: u64,
    /// Kept only for accuracy runs and sampled compliance queries.
    pub response_bytes: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub query: Query,
    pub completion: Option<Completion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub profile: String,
    pub settings: RunSettings,
    /// Sorted by query id, gapless from 0.
    pub trace: Vec<TraceEntry>,
    pub overrun_count: u64,
    pub wall_start_ns: u64,
    pub wall_end_ns: u64,
    /// Set when the run stopped early; such a log is never valid.
    pub failure: Option<String>,
}

impl RunLog {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.trace.iter().all(|e| e.completion.is_some())
    }

    pub fn summary(&self) -> Result<RunSummary, StatsError> {
        stats::summarize(self)
    }

    pub fn sample_schedule(&self) -> Vec<Vec<usize>> {
        self.trace
            .iter()
            .map(|e| e.query.sample_indices.clone())
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("store_size must be at least 1")]
    EmptyStore,
    #[error("samples_per_query must be at least 1")]
    NoSamplesPerQuery,
}

/// Endless stream of sample-index lists drawn as `splitmix64 mod store_size`.
#[derive(Debug, Clone)]
pub struct ScheduleGen {
    rng: SplitMix64,
    store_size: u64,
    samples_per_query: usize,
}

impl ScheduleGen {
    pub fn new(seed: u64, store_size: usize, samples_per_query: usize) -> Result<Self, ScheduleError> {
        if store_size == 0 {
            return Err(ScheduleError::EmptyStore);
        }
        if samples_per_query == 0 {
            return Err(ScheduleError::NoSamplesPerQuery);
        }
        Ok(Self {
            rng: SplitMix64::new(seed),
            store_size: store_size as u64,
            samples_per_query,
        })
    }
}

impl Iterator for ScheduleGen {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(
            (0..self.samples_per_query)
                .map(|_| (self.rng.next() % self.store_size) as usize)
                .collect(),
        )
    }
}

pub fn generate_schedule(
    seed: u64,
    store_size: usize,
    n_queries: usize,
    samples_per_query: usize,
) -> Result<Vec<Vec<usize>>, ScheduleError> {
    Ok(ScheduleGen::new(seed, store_size, samples_per_query)?
        .take(n_queries)
        .collect())
}

/// Sequential queries that touch every store index at least once.
pub fn coverage_schedule(store_size: usize, samples_per_query: usize) -> Vec<Vec<usize>> {
    if store_size == 0 || samples_per_query == 0 {
        return Vec::new();
    }
    let n = store_size.div_ceil(samples_per_query);
    (0..n)
        .map(|q| {
            (0..samples_per_query)
                .map(|k| (q * samples_per_query + k) % store_size)
                .collect()
        })
        .collect()
}

/// `round(i * 1e9 / rate)`, computed from `i` alone so there is no
/// accumulated drift. Halves round up.
pub fn scheduled_offset_ns(i: u64, rate_hz: f64) -> u64 {
    if rate_hz.fract() == 0.0 && (1.0..=1e9).contains(&rate_hz) {
        let r = rate_hz as u128;
        ((i as u128 * 2_000_000_000 + r) / (2 * r)) as u64
    } else {
        (i as f64 * 1e9 / rate_hz).round() as u64
    }
}

/// Queries issued by a Constant Stream run: enough to cover the minimum
/// duration at `rate_hz`, and at least `min_query_count`.
pub fn constant_stream_query_count(min_duration_ns: u64, min_query_count: u64, rate_hz: f64) -> u64 {
    let by_duration = if rate_hz.fract() == 0.0 && (1.0..=1e9).contains(&rate_hz) {
        (min_duration_ns as u128 * rate_hz as u128).div_ceil(1_000_000_000) as u64
    } else {
        (min_duration_ns as f64 * rate_hz / 1e9).ceil() as u64
    };
    by_duration.max(min_query_count)
}

/// Which completions keep their response bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Retention {
    #[default]
    None,
    All,
    Queries(HashSet<u64>),
    /// Seeded subset: query `q` is kept when `mix64(seed ^ q)` falls in the
    /// lowest `fraction` of the u64 range.
    Fraction { seed: u64, fraction: f64 },
}

impl Retention {
    pub fn keeps(&self, query_id: u64) -> bool {
        match self {
            Retention::None => false,
            Retention::All => true,
            Retention::Queries(ids) => ids.contains(&query_id),
            Retention::Fraction { seed, fraction } => {
                let u = (mix64(seed ^ query_id) >> 11) as f64 / (1u64 << 53) as f64;
                u < *fraction
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sut(#[from] SutError),
    #[error("completion recorder: {0}")]
    Recorder(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A run that stopped early. The log holds everything recorded up to the
/// failure and has `failure` set.
#[derive(Debug)]
pub struct RunFailure {
    pub log: Box<RunLog>,
    pub error: RunError,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run failed after {} queries: {}",
            self.log.trace.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Default)]
struct RecorderState {
    issued: u64,
    done: HashMap<u64, Completion>,
    failure: Option<String>,
}

/// Thread-safe completion sink owned by one run.
struct Recorder {
    clock: Arc<dyn Clock>,
    retention: Retention,
    state: Mutex<RecorderState>,
    changed: Condvar,
}

impl Recorder {
    fn new(clock: Arc<dyn Clock>, retention: Retention) -> Self {
        Self {
            clock,
            retention,
            state: Mutex::default(),
            changed: Condvar::new(),
        }
    }

    fn register(&self) -> u64 {
        let mut st = self.state.lock().unwrap();
        st.issued += 1;
        st.issued - 1
    }

    fn failure(&self) -> Option<String> {
        self.state.lock().unwrap().failure.clone()
    }

    fn wait_for(&self, query_id: u64) -> Result<u64, String> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(msg) = &st.failure {
                return Err(msg.clone());
            }
            if let Some(c) = st.done.get(&query_id) {
                return Ok(c.completion_ns);
            }
            st = self.changed.wait(st).unwrap();
        }
    }

    fn wait_all(&self) -> Result<(), String> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(msg) = &st.failure {
                return Err(msg.clone());
            }
            if st.done.len() as u64 == st.issued {
                return Ok(());
            }
            st = self.changed.wait(st).unwrap();
        }
    }

    fn take(&self) -> HashMap<u64, Completion> {
        std::mem::take(&mut self.state.lock().unwrap().done)
    }
}

impl CompletionTarget for Recorder {
    fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    fn deliver(&self, query_id: u64, completion_ns: u64, response: Vec<u8>) {
        let response_digest = fnv1a64(&response);
        let response_bytes = self.retention.keeps(query_id).then_some(response);
        let mut st = self.state.lock().unwrap();
        if query_id >= st.issued {
            st.failure
                .get_or_insert_with(|| format!("completion for unissued query {query_id}"));
        } else {
            let st = &mut *st;
            match st.done.entry(query_id) {
                Entry::Occupied(_) => {
                    st.failure
                        .get_or_insert_with(|| format!("duplicate completion for query {query_id}"));
                }
                Entry::Vacant(slot) => {
                    slot.insert(Completion {
                        query_id,
                        completion_ns,
                        response_digest,
                        response_bytes,
                    });
                }
            }
        }
        self.changed.notify_all();
    }

    fn fail(&self, reason: String) {
        self.state.lock().unwrap().failure.get_or_insert(reason);
        self.changed.notify_all();
    }
}

/// Overrides for a single run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Use this store instead of the synthetic one from the settings.
    pub store: Option<Arc<SampleStore>>,
    /// Issue exactly these queries instead of the seeded schedule.
    pub schedule: Option<Vec<Vec<usize>>>,
    pub retention: Option<Retention>,
}

enum Plan<'a> {
    ClosedLoop {
        source: Box<dyn Iterator<Item = Vec<usize>> + 'a>,
        min_queries: u64,
        min_duration_ns: u64,
        max_queries: Option<u64>,
    },
    OpenLoop {
        source: Box<dyn Iterator<Item = Vec<usize>> + 'a>,
        count: u64,
        rate_hz: f64,
    },
}

/// Drives one run at a time against a SUT.
pub struct Engine {
    clock: Arc<dyn Clock>,
}

impl Engine {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock }
    }

    /// Engine on a discrete-event clock starting at 0.
    pub fn simulated() -> Self {
        Self::new(Arc::new(SimClock::new()))
    }

    pub fn real() -> Self {
        Self::new(Arc::new(MonotonicClock::new()))
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Runs whatever `settings.mode` and `settings.scenario` ask for.
    pub fn run(
        &mut self,
        sut: &mut dyn SutContract,
        settings: &RunSettings,
        profile: &BenchmarkProfile,
    ) -> Result<RunLog, RunFailure> {
        self.run_with(sut, settings, profile, RunOptions::default())
    }

    pub fn run_single_stream(
        &mut self,
        sut: &mut dyn SutContract,
        settings: &RunSettings,
        profile: &BenchmarkProfile,
    ) -> Result<RunLog, RunFailure> {
        let settings = RunSettings {
            scenario: Scenario::SingleStream,
            mode: Mode::Performance,
            ..settings.clone()
        };
        self.run_with(sut, &settings, profile, RunOptions::default())
    }

    pub fn run_constant_stream(
        &mut self,
        sut: &mut dyn SutContract,
        settings: &RunSettings,
        profile: &BenchmarkProfile,
    ) -> Result<RunLog, RunFailure> {
        let settings = RunSettings {
            scenario: Scenario::ConstantStream,
            mode: Mode::Performance,
            ..settings.clone()
        };
        self.run_with(sut, &settings, profile, RunOptions::default())
    }

    /// Closed-loop pass over the whole store with every response retained.
    pub fn run_accuracy(
        &mut self,
        sut: &mut dyn SutContract,
        settings: &RunSettings,
        profile: &BenchmarkProfile,
    ) -> Result<RunLog, RunFailure> {
        let settings = RunSettings {
            mode: Mode::Accuracy,
            ..settings.clone()
        };
        self.run_with(sut, &settings, profile, RunOptions::default())
    }

    pub fn run_with(
        &mut self,
        sut: &mut dyn SutContract,
        settings: &RunSettings,
        profile: &BenchmarkProfile,
        opts: RunOptions,
    ) -> Result<RunLog, RunFailure> {
        let mut snapshot = settings.clone();
        snapshot.profile = Some(profile.name.clone());
        if let Some(store) = &opts.store {
            snapshot.store_size = store.len();
        }
        let empty_log = |settings: &RunSettings, failure: String| RunLog {
            profile: profile.name.clone(),
            settings: settings.clone(),
            trace: Vec::new(),
            overrun_count: 0,
            wall_start_ns: 0,
            wall_end_ns: 0,
            failure: Some(failure),
        };

        let violations = validate(profile, &snapshot);
        if !violations.is_empty() {
            let error = RunError::Invalid(violations);
            return Err(RunFailure {
                log: Box::new(empty_log(&snapshot, error.to_string())),
                error,
            });
        }
        let sample_bytes = snapshot.effective_sample_bytes(profile);
        snapshot.sample_bytes = Some(sample_bytes);
        let store = opts.store.clone().unwrap_or_else(|| {
            Arc::new(SampleStore::synthetic(
                snapshot.seed,
                snapshot.store_size,
                sample_bytes,
            ))
        });

        let spq = profile.inputs_per_query;
        let retention = opts.retention.clone().unwrap_or(match snapshot.mode {
            Mode::Accuracy => Retention::All,
            Mode::Performance => Retention::None,
        });
        let explicit = opts.schedule.clone();
        let plan = match (snapshot.mode, snapshot.scenario, explicit) {
            (Mode::Accuracy, _, schedule) => {
                let schedule = schedule.unwrap_or_else(|| coverage_schedule(store.len(), spq));
                let n = schedule.len() as u64;
                Plan::ClosedLoop {
                    source: Box::new(schedule.into_iter()),
                    min_queries: n,
                    min_duration_ns: 0,
                    max_queries: Some(n),
                }
            }
            (Mode::Performance, Scenario::SingleStream, Some(schedule)) => {
                let n = schedule.len() as u64;
                Plan::ClosedLoop {
                    source: Box::new(schedule.into_iter()),
                    min_queries: n,
                    min_duration_ns: 0,
                    max_queries: Some(n),
                }
            }
            (Mode::Performance, Scenario::SingleStream, None) => {
                let gen = match ScheduleGen::new(snapshot.seed, store.len(), spq) {
                    Ok(g) => g,
                    Err(e) => {
                        return Err(RunFailure {
                            log: Box::new(empty_log(&snapshot, e.to_string())),
                            error: e.into(),
                        })
                    }
                };
                Plan::ClosedLoop {
                    source: Box::new(gen),
                    min_queries: snapshot.min_query_count,
                    min_duration_ns: snapshot.min_duration_ns,
                    max_queries: None,
                }
            }
            (Mode::Performance, Scenario::ConstantStream, schedule) => {
                let rate_hz = snapshot
                    .effective_rate_hz(profile)
                    .expect("validated constant stream rate");
                match schedule {
                    Some(s) => Plan::OpenLoop {
                        count: s.len() as u64,
                        source: Box::new(s.into_iter()),
                        rate_hz,
                    },
                    None => {
                        let gen = match ScheduleGen::new(snapshot.seed, store.len(), spq) {
                            Ok(g) => g,
                            Err(e) => {
                                return Err(RunFailure {
                                    log: Box::new(empty_log(&snapshot, e.to_string())),
                                    error: e.into(),
                                })
                            }
                        };
                        Plan::OpenLoop {
                            source: Box::new(gen),
                            count: constant_stream_query_count(
                                snapshot.min_duration_ns,
                                snapshot.min_query_count,
                                rate_hz,
                            ),
                            rate_hz,
                        }
                    }
                }
            }
        };

        self.execute(sut, snapshot, profile, store, plan, retention)
    }

    fn execute(
        &mut self,
        sut: &mut dyn SutContract,
        settings: RunSettings,
        profile: &BenchmarkProfile,
        store: Arc<SampleStore>,
        plan: Plan<'_>,
        retention: Retention,
    ) -> Result<RunLog, RunFailure> {
        let clock = Arc::clone(&self.clock);
        let recorder = Arc::new(Recorder::new(Arc::clone(&clock), retention));
        let sink = CompletionSink::new(recorder.clone());
        let mut queries: Vec<Query> = Vec::new();

        let config = SutRunConfig {
            profile: profile.name.clone(),
            mode: settings.mode,
            inputs_per_query: profile.inputs_per_query,
            store_size: store.len(),
            sample_bytes: settings.sample_bytes.unwrap_or(0),
        };
        let all: Vec<usize> = (0..store.len()).collect();
        let mut error: Option<RunError> = sut
            .configure(&config)
            .and_then(|()| sut.load_samples(&store, &all))
            .err()
            .map(RunError::from);

        let start = clock.now_ns();
        if error.is_none() {
            error = match plan {
                Plan::ClosedLoop {
                    source,
                    min_queries,
                    min_duration_ns,
                    max_queries,
                } => self.closed_loop(
                    sut,
                    &sink,
                    &recorder,
                    &mut queries,
                    source,
                    start,
                    (min_queries, min_duration_ns, max_queries),
                ),
                Plan::OpenLoop {
                    source,
                    count,
                    rate_hz,
                } => self.open_loop(sut, &sink, &recorder, &mut queries, source, start, count, rate_hz),
            }
            .err();
        }
        if error.is_none() {
            error = sut
                .flush()
                .map_err(RunError::from)
                .and_then(|()| recorder.wait_all().map_err(RunError::Recorder))
                .err();
        }

        let mut done = recorder.take();
        if let Some(last) = done.values().map(|c| c.completion_ns).max() {
            clock.sleep_until(last);
        }
        let wall_end = clock.now_ns();
        if error.is_none() {
            error = sut.unload().err().map(RunError::from);
        }

        let trace: Vec<TraceEntry> = queries
            .into_iter()
            .map(|mut q| {
                let completion = done.remove(&q.query_id).map(|mut c| {
                    c.completion_ns = c.completion_ns.saturating_sub(start);
                    c
                });
                q.issue_ns -= start;
                q.scheduled_ns = q.scheduled_ns.map(|s| s - start);
                TraceEntry {
                    query: q,
                    completion,
                }
            })
            .collect();
        let mut log = RunLog {
            profile: profile.name.clone(),
            settings,
            trace,
            overrun_count: 0,
            wall_start_ns: start,
            wall_end_ns: wall_end,
            failure: error.as_ref().map(ToString::to_string),
        };
        log.overrun_count = stats::count_overruns(&log);
        match error {
            None => Ok(log),
            Some(error) => Err(RunFailure {
                log: Box::new(log),
                error,
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn closed_loop(
        &self,
        sut: &mut dyn SutContract,
        sink: &CompletionSink,
        recorder: &Recorder,
        queries: &mut Vec<Query>,
        mut source: Box<dyn Iterator<Item = Vec<usize>> + '_>,
        start: u64,
        (min_queries, min_duration_ns, max_queries): (u64, u64, Option<u64>),
    ) -> Result<(), RunError> {
        let mut last_completion_rel = 0u64;
        loop {
            let issued = queries.len() as u64;
            if issued >= min_queries && last_completion_rel >= min_duration_ns {
                break;
            }
            if max_queries.is_some_and(|m| issued >= m) {
                break;
            }
            let Some(sample_indices) = source.next() else {
                break;
            };
            let query_id = recorder.register();
            let query = Query {
                query_id,
                sample_indices,
                scheduled_ns: None,
                issue_ns: self.clock.now_ns(),
            };
            let issued = sut.issue(&query, sink);
            queries.push(query);
            issued?;
            let done_ns = recorder.wait_for(query_id).map_err(RunError::Recorder)?;
            self.clock.sleep_until(done_ns);
            last_completion_rel = done_ns.saturating_sub(start);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn open_loop(
        &self,
        sut: &mut dyn SutContract,
        sink: &CompletionSink,
        recorder: &Recorder,
        queries: &mut Vec<Query>,
        mut source: Box<dyn Iterator<Item = Vec<usize>> + '_>,
        start: u64,
        count: u64,
        rate_hz: f64,
    ) -> Result<(), RunError> {
        for i in 0..count {
            let Some(sample_indices) = source.next() else {
                break;
            };
            let scheduled = start + scheduled_offset_ns(i, rate_hz);
            self.clock.sleep_until(scheduled);
            let query_id = recorder.register();
            let query = Query {
                query_id,
                sample_indices,
                scheduled_ns: Some(scheduled),
                issue_ns: self.clock.now_ns(),
            };
            let issued = sut.issue(&query, sink);
            queries.push(query);
            issued?;
            if let Some(msg) = recorder.failure() {
                return Err(RunError::Recorder(msg));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_index_store() {
        assert_eq!(
            generate_schedule(99, 1, 3, 2).unwrap(),
            vec![vec![0, 0], vec![0, 0], vec![0, 0]]
        );
    }

    #[test]
    fn schedule_matches_raw_generator() {
        let mut rng = SplitMix64::new(0);
        let first = rng.next();
        assert_eq!(first, 0xE220_A839_7B1D_CDAF);
        let s = generate_schedule(0, 1000, 1, 1).unwrap();
        assert_eq!(s[0][0] as u64, first % 1000);
    }

    #[test]
    fn schedule_errors() {
        assert_eq!(generate_schedule(0, 0, 1, 1), Err(ScheduleError::EmptyStore));
        assert_eq!(
            generate_schedule(0, 1, 1, 0),
            Err(ScheduleError::NoSamplesPerQuery)
        );
    }

    #[test]
    fn schedule_deterministic() {
        assert_eq!(
            generate_schedule(5, 17, 100, 6).unwrap(),
            generate_schedule(5, 17, 100, 6).unwrap()
        );
        assert_ne!(
            generate_schedule(5, 17, 100, 6).unwrap(),
            generate_schedule(6, 17, 100, 6).unwrap()
        );
    }

    #[test]
    fn coverage() {
        assert_eq!(coverage_schedule(4, 1), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(coverage_schedule(4, 6), vec![vec![0, 1, 2, 3, 0, 1]]);
        assert_eq!(coverage_schedule(5, 2).len(), 3);
    }

    #[test]
    fn fixed_rate_offsets() {
        assert_eq!(scheduled_offset_ns(0, 15.0), 0);
        assert_eq!(scheduled_offset_ns(1, 15.0), 66_666_667);
        assert_eq!(scheduled_offset_ns(2, 15.0), 133_333_333);
        assert_eq!(scheduled_offset_ns(1, 12.0), 83_333_333);
        // non-integral rates go through f64
        assert_eq!(scheduled_offset_ns(3, 2.5), 1_200_000_000);
        for i in [0u64, 1, 7, 1000, 123_457] {
            let expect = (i as f64 * 1e9 / 15.0).round() as u64;
            assert_eq!(scheduled_offset_ns(i, 15.0), expect);
        }
    }

    #[test]
    fn constant_stream_counts() {
        assert_eq!(constant_stream_query_count(60_000_000_000, 1, 15.0), 900);
        assert_eq!(constant_stream_query_count(1, 1, 15.0), 1);
        assert_eq!(constant_stream_query_count(0, 5, 12.0), 5);
        assert_eq!(constant_stream_query_count(1_000_000_000, 1, 2.5), 3);
    }
}
