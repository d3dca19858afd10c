//! Simulated SUTs: configurable latency distributions, an optional result
//! cache (prohibited behaviour, used to exercise compliance checks), and an
//! adversarial mode that degrades responses during performance runs.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use rand::distr::{Distribution, Uniform};
use rand_distr::LogNormal;

use super::{CompletionSink, SutContract, SutError, SutRunConfig};
use crate::engine::Query;
use crate::profiles::Mode;
use crate::rng::{fnv1a64, mix64, SplitMix64};
use crate::store::SampleStore;

const SUT_SALT: u64 = 0x5349_4d55_4c41_5445;

#[derive(Debug, Clone, PartialEq)]
pub enum LatencyModel {
    Fixed(u64),
    /// Inclusive range in ns.
    Uniform { lo_ns: u64, hi_ns: u64 },
    /// `mu` and `sigma` of the underlying normal, in ln-nanoseconds.
    LogNormal { mu: f64, sigma: f64 },
    /// Two point masses; `fast_weight` is the probability of `fast_ns`.
    Bimodal {
        fast_ns: u64,
        slow_ns: u64,
        fast_weight: f64,
    },
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            LatencyModel::Fixed(_) => Ok(()),
            LatencyModel::Uniform { lo_ns, hi_ns } if lo_ns <= hi_ns => Ok(()),
            LatencyModel::Uniform { .. } => Err("uniform requires lo <= hi".into()),
            LatencyModel::LogNormal { mu, sigma } if mu.is_finite() && sigma.is_finite() && sigma >= 0.0 => Ok(()),
            LatencyModel::LogNormal { .. } => Err("lognormal requires finite mu and sigma >= 0".into()),
            LatencyModel::Bimodal { fast_weight, .. } if fast_weight > 0.0 && fast_weight < 1.0 => Ok(()),
            LatencyModel::Bimodal { .. } => Err("bimodal weight must be in (0, 1)".into()),
        }
    }

    /// One latency draw. Consumes a fixed pattern of generator outputs per
    /// model so sequences are reproducible.
    pub fn sample(&self, rng: &mut SplitMix64) -> u64 {
        match *self {
            LatencyModel::Fixed(ns) => ns,
            LatencyModel::Uniform { lo_ns, hi_ns } => Uniform::new_inclusive(lo_ns, hi_ns)
                .expect("validated range")
                .sample(rng),
            LatencyModel::LogNormal { mu, sigma } => {
                let x: f64 = LogNormal::new(mu, sigma).expect("validated").sample(rng);
                x.round().min(u64::MAX as f64) as u64
            }
            LatencyModel::Bimodal {
                fast_ns,
                slow_ns,
                fast_weight,
            } => {
                if rng.next_f64() < fast_weight {
                    fast_ns
                } else {
                    slow_ns
                }
            }
        }
    }
}

pub fn simulate_latency(config: &SimulatedSutConfig, rng: &mut SplitMix64) -> u64 {
    config.latency.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSutConfig {
    pub latency: LatencyModel,
    /// Latency multiplier applied when a sample index was seen within the
    /// last `cache_window` queries. 1.0 disables caching.
    pub cache_speedup: f64,
    pub cache_window: usize,
    pub seed: u64,
    pub echo_responses: bool,
    /// Return half-length responses whenever the run is a performance run.
    pub truncate_in_performance: bool,
}

impl SimulatedSutConfig {
    pub fn new(latency: LatencyModel) -> Self {
        Self {
            latency,
            cache_speedup: 1.0,
            cache_window: 0,
            seed: 0,
            echo_responses: false,
            truncate_in_performance: false,
        }
    }

    pub fn fixed_ns(ns: u64) -> Self {
        Self::new(LatencyModel::Fixed(ns))
    }

    pub fn with_cache(mut self, window: usize, speedup: f64) -> Self {
        self.cache_window = window;
        self.cache_speedup = speedup;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_echo(mut self) -> Self {
        self.echo_responses = true;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        self.latency.validate()?;
        if !(self.cache_speedup > 0.0 && self.cache_speedup <= 1.0) {
            return Err(format!("cache speedup {} is outside (0, 1]", self.cache_speedup));
        }
        Ok(())
    }

    fn caches(&self) -> bool {
        self.cache_window > 0 && self.cache_speedup < 1.0
    }
}

struct Job {
    query_id: u64,
    issue_ns: u64,
    latency_ns: u64,
    indices: Vec<usize>,
    truncate: bool,
    sink: CompletionSink,
}

struct Loaded {
    store: Arc<SampleStore>,
    present: Vec<bool>,
    digests: Arc<Vec<u64>>,
}

#[derive(Default)]
struct Outstanding {
    count: Mutex<u64>,
    idle: Condvar,
}

fn session_rng(seed: u64, session: u64) -> SplitMix64 {
    SplitMix64::new(mix64(mix64(seed ^ SUT_SALT) ^ session))
}

/// In-process SUT with a single FIFO server thread.
pub struct SimulatedSut {
    name: String,
    config: SimulatedSutConfig,
    rng: SplitMix64,
    /// Number of `configure` calls so far; each run draws a fresh stream.
    session: u64,
    history: VecDeque<Vec<usize>>,
    mode: Mode,
    loaded: Option<Loaded>,
    worker: Option<(mpsc::Sender<Job>, JoinHandle<()>)>,
    outstanding: Arc<Outstanding>,
}

impl SimulatedSut {
    pub fn new(name: impl Into<String>, config: SimulatedSutConfig) -> Result<Self, SutError> {
        config.validate().map_err(SutError::Config)?;
        let rng = session_rng(config.seed, 0);
        Ok(Self {
            name: name.into(),
            config,
            rng,
            session: 0,
            history: VecDeque::new(),
            mode: Mode::Performance,
            loaded: None,
            worker: None,
            outstanding: Arc::default(),
        })
    }

    pub fn config(&self) -> &SimulatedSutConfig {
        &self.config
    }

    /// Latency for the next query over `indices`, applying the cache rule.
    fn next_latency(&mut self, indices: &[usize]) -> u64 {
        let base = simulate_latency(&self.config, &mut self.rng);
        if !self.config.caches() {
            return base;
        }
        let hit = self
            .history
            .iter()
            .any(|prev| prev.iter().any(|i| indices.contains(i)));
        self.history.push_back(indices.to_vec());
        while self.history.len() > self.config.cache_window {
            self.history.pop_front();
        }
        if hit {
            (base as f64 * self.config.cache_speedup).round() as u64
        } else {
            base
        }
    }

    fn spawn_worker(&mut self, store: Arc<SampleStore>, digests: Arc<Vec<u64>>) {
        let (tx, rx) = mpsc::channel::<Job>();
        let echo = self.config.echo_responses;
        let outstanding = Arc::clone(&self.outstanding);
        let handle = std::thread::spawn(move || {
            let mut busy_until = 0u64;
            for job in rx {
                let mut response = if echo {
                    store.concat(&job.indices).unwrap_or_default()
                } else {
                    let mut bytes = Vec::with_capacity(job.indices.len() * 8);
                    for &i in &job.indices {
                        bytes.extend_from_slice(&digests[i].to_le_bytes());
                    }
                    fnv1a64(&bytes).to_le_bytes().to_vec()
                };
                if job.truncate {
                    response.truncate(response.len() / 2);
                }
                let clock = job.sink.clock();
                if clock.is_simulated() {
                    let start = job.issue_ns.max(busy_until);
                    busy_until = start + job.latency_ns;
                    job.sink.complete_at(job.query_id, busy_until, response);
                } else {
                    let start = clock.now_ns().max(job.issue_ns);
                    clock.sleep_until(start + job.latency_ns);
                    job.sink.complete(job.query_id, response);
                }
                let mut n = outstanding.count.lock().unwrap();
                *n -= 1;
                if *n == 0 {
                    outstanding.idle.notify_all();
                }
            }
        });
        self.worker = Some((tx, handle));
    }

    fn stop_worker(&mut self) {
        if let Some((tx, handle)) = self.worker.take() {
            drop(tx);
            let _ = handle.join();
        }
    }
}

impl Drop for SimulatedSut {
    fn drop(&mut self) {
        self.stop_worker();
    }
}

impl SutContract for SimulatedSut {
    fn name(&self) -> &str {
        &self.name
    }

    fn configure(&mut self, config: &SutRunConfig) -> Result<(), SutError> {
        self.mode = config.mode;
        self.rng = session_rng(self.config.seed, self.session);
        self.session += 1;
        self.history.clear();
        Ok(())
    }

    fn load_samples(&mut self, store: &Arc<SampleStore>, indices: &[usize]) -> Result<(), SutError> {
        self.stop_worker();
        let mut present = vec![false; store.len()];
        for &i in indices {
            *present
                .get_mut(i)
                .ok_or(SutError::UnknownSample(i))? = true;
        }
        let digests: Arc<Vec<u64>> = Arc::new(
            (0..store.len())
                .map(|i| if present[i] { store.digest(i).unwrap_or(0) } else { 0 })
                .collect(),
        );
        self.spawn_worker(Arc::clone(store), Arc::clone(&digests));
        self.loaded = Some(Loaded {
            store: Arc::clone(store),
            present,
            digests,
        });
        Ok(())
    }

    fn unload(&mut self) -> Result<(), SutError> {
        self.flush()?;
        self.stop_worker();
        self.loaded = None;
        Ok(())
    }

    fn issue(&mut self, query: &Query, sink: &CompletionSink) -> Result<(), SutError> {
        let loaded = self.loaded.as_ref().ok_or(SutError::NotLoaded)?;
        if let Some(&bad) = query
            .sample_indices
            .iter()
            .find(|&&i| !loaded.present.get(i).copied().unwrap_or(false))
        {
            return Err(SutError::UnknownSample(bad));
        }
        debug_assert!(loaded.store.len() == loaded.digests.len());
        let latency_ns = self.next_latency(&query.sample_indices);
        let job = Job {
            query_id: query.query_id,
            issue_ns: query.issue_ns,
            latency_ns,
            indices: query.sample_indices.clone(),
            truncate: self.config.truncate_in_performance && self.mode == Mode::Performance,
            sink: sink.clone(),
        };
        *self.outstanding.count.lock().unwrap() += 1;
        let (tx, _) = self.worker.as_ref().ok_or(SutError::NotLoaded)?;
        if tx.send(job).is_err() {
            *self.outstanding.count.lock().unwrap() -= 1;
            return Err(SutError::Failed("worker thread exited".into()));
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), SutError> {
        let mut n = self.outstanding.count.lock().unwrap();
        while *n > 0 {
            n = self.outstanding.idle.wait(n).unwrap();
        }
        Ok(())
    }
}
