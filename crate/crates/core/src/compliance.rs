//! Compliance checks: determinism, anti-caching and accuracy consistency in
//! performance mode. The tests and their thresholds are defined by this
//! harness; verdict output is labelled [`VERDICT_ORIGIN`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{generate_schedule, Engine, Retention, RunFailure, RunOptions, ScheduleError};
use crate::profiles::{BenchmarkProfile, Mode, RunSettings, Scenario};
use crate::rng::{fnv1a64, mix64};
use crate::stats::StatsError;
use crate::store::SampleStore;
use crate::sut::SutContract;

pub const VERDICT_ORIGIN: &str = "artifact-defined";
pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.1;
pub const DEFAULT_CACHING_QUERIES: usize = 1000;
pub const MIN_CACHING_QUERIES: usize = 100;
pub const DEFAULT_DETERMINISM_QUERIES: usize = 64;
/// Sample size used for the all-distinct caching store.
pub const CACHING_SAMPLE_BYTES: usize = 1024;

const RETENTION_SALT: u64 = 0x6163_6370_6572_6621;
const CACHING_STORE_SALT: u64 = 0x6361_6368_696e_6721;

#[derive(Debug, Error)]
pub enum ComplianceError {
    #[error("caching test needs at least {MIN_CACHING_QUERIES} queries per arm, got {0}")]
    InsufficientQueries(usize),
    #[error("ratio threshold {0} is outside (0, 1]")]
    BadThreshold(f64),
    #[error("sample fraction {0} is outside (0, 1]")]
    BadFraction(f64),
    #[error("no performance-run responses were retained")]
    EmptySubset,
    #[error(transparent)]
    Run(#[from] Box<RunFailure>),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

impl From<RunFailure> for ComplianceError {
    fn from(f: RunFailure) -> Self {
        ComplianceError::Run(Box::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ComplianceTest {
    Determinism,
    Caching,
    AccuracyInPerf,
}

impl ComplianceTest {
    pub const ALL: [ComplianceTest; 3] = [
        ComplianceTest::Determinism,
        ComplianceTest::Caching,
        ComplianceTest::AccuracyInPerf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComplianceTest::Determinism => "determinism",
            ComplianceTest::Caching => "caching",
            ComplianceTest::AccuracyInPerf => "accuracy_in_perf",
        }
    }
}

impl fmt::Display for ComplianceTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComplianceTest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown compliance test `{s}` (determinism, caching, accuracy_in_perf)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceVerdict {
    pub test_name: String,
    pub passed: bool,
    pub evidence: BTreeMap<String, f64>,
}

impl ComplianceVerdict {
    fn new(test: ComplianceTest, evidence: BTreeMap<String, f64>) -> Self {
        let mut v = Self {
            test_name: test.as_str().to_string(),
            passed: false,
            evidence,
        };
        v.passed = v.recompute().expect("evidence built by the test itself");
        v
    }

    fn get(&self, key: &str) -> Result<f64, String> {
        self.evidence
            .get(key)
            .copied()
            .ok_or_else(|| format!("{}: evidence lacks `{key}`", self.test_name))
    }

    /// Derives `passed` from the evidence alone.
    pub fn recompute(&self) -> Result<bool, String> {
        let test: ComplianceTest = self.test_name.parse()?;
        Ok(match test {
            ComplianceTest::Determinism => {
                self.get("schedule_mismatches")? == 0.0 && self.get("ordering_mismatches")? == 0.0
            }
            ComplianceTest::Caching => {
                self.get("p50_repeated_ns")? >= self.get("ratio_threshold")? * self.get("p50_unique_ns")?
            }
            ComplianceTest::AccuracyInPerf => {
                self.get("retained")? > 0.0 && self.get("mismatched")? == 0.0
            }
        })
    }

    pub fn is_consistent(&self) -> bool {
        self.recompute() == Ok(self.passed)
    }
}

impl fmt::Display for ComplianceVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{VERDICT_ORIGIN}] {}: {}",
            self.test_name,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for (k, v) in &self.evidence {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

fn mismatches<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

/// Generates the seeded schedule twice and runs two short performance runs,
/// comparing sample sequences and issue order.
pub fn test_determinism(
    engine: &mut Engine,
    sut: &mut dyn SutContract,
    settings: &RunSettings,
    profile: &BenchmarkProfile,
    queries: usize,
) -> Result<ComplianceVerdict, ComplianceError> {
    let spq = profile.inputs_per_query;
    let a = generate_schedule(settings.seed, settings.store_size, queries, spq)?;
    let b = generate_schedule(settings.seed, settings.store_size, queries, spq)?;
    let alt = generate_schedule(settings.seed.wrapping_add(1), settings.store_size, queries, spq)?;

    let short = RunSettings {
        mode: Mode::Performance,
        min_duration_ns: 0,
        min_query_count: queries as u64,
        ..settings.clone()
    };
    let order = |engine: &mut Engine, sut: &mut dyn SutContract| -> Result<Vec<(u64, Vec<usize>)>, ComplianceError> {
        let log = engine.run(sut, &short, profile)?;
        Ok(log
            .trace
            .into_iter()
            .map(|t| (t.query.query_id, t.query.sample_indices))
            .collect())
    };
    let run_a = order(engine, sut)?;
    let run_b = order(engine, sut)?;

    let evidence = BTreeMap::from([
        ("queries".to_string(), queries as f64),
        ("schedule_mismatches".to_string(), mismatches(&a, &b) as f64),
        ("ordering_mismatches".to_string(), mismatches(&run_a, &run_b) as f64),
        ("alt_seed_mismatches".to_string(), mismatches(&a, &alt) as f64),
    ]);
    Ok(ComplianceVerdict::new(ComplianceTest::Determinism, evidence))
}

/// Closed-loop run over `queries` all-distinct queries, then the same number
/// of queries that all repeat the first sample set. An honest SUT shows
/// similar medians; a result cache shows a faster repeated arm.
pub fn test_caching(
    engine: &mut Engine,
    sut: &mut dyn SutContract,
    settings: &RunSettings,
    profile: &BenchmarkProfile,
    ratio_threshold: f64,
    queries: usize,
) -> Result<ComplianceVerdict, ComplianceError> {
    if queries < MIN_CACHING_QUERIES {
        return Err(ComplianceError::InsufficientQueries(queries));
    }
    if !(ratio_threshold > 0.0 && ratio_threshold <= 1.0) {
        return Err(ComplianceError::BadThreshold(ratio_threshold));
    }
    let spq = profile.inputs_per_query;
    let bytes = settings
        .effective_sample_bytes(profile)
        .min(CACHING_SAMPLE_BYTES);
    let store = Arc::new(SampleStore::synthetic(
        mix64(settings.seed ^ CACHING_STORE_SALT),
        queries * spq,
        bytes,
    ));
    let unique: Vec<Vec<usize>> = (0..queries)
        .map(|q| (q * spq..(q + 1) * spq).collect())
        .collect();
    let repeated: Vec<Vec<usize>> = vec![(0..spq).collect(); queries];
    let arm = RunSettings {
        scenario: Scenario::SingleStream,
        mode: Mode::Performance,
        sample_bytes: Some(bytes),
        ..settings.clone()
    };
    let mut p50 = |schedule: Vec<Vec<usize>>| -> Result<u64, ComplianceError> {
        let opts = RunOptions {
            store: Some(Arc::clone(&store)),
            schedule: Some(schedule),
            retention: None,
        };
        Ok(engine.run_with(sut, &arm, profile, opts)?.summary()?.p50_ns)
    };
    let p50_unique = p50(unique)?;
    let p50_repeated = p50(repeated)?;
    let ratio = if p50_unique == 0 {
        1.0
    } else {
        p50_repeated as f64 / p50_unique as f64
    };
    let evidence = BTreeMap::from([
        ("queries".to_string(), queries as f64),
        ("p50_unique_ns".to_string(), p50_unique as f64),
        ("p50_repeated_ns".to_string(), p50_repeated as f64),
        ("ratio".to_string(), ratio),
        ("ratio_threshold".to_string(), ratio_threshold),
    ]);
    Ok(ComplianceVerdict::new(ComplianceTest::Caching, evidence))
}

/// Performance run that keeps the responses of a seeded `sample_fraction` of
/// queries, followed by an accuracy run over exactly those sample lists.
pub fn test_accuracy_in_perf(
    engine: &mut Engine,
    sut: &mut dyn SutContract,
    settings: &RunSettings,
    profile: &BenchmarkProfile,
    sample_fraction: f64,
) -> Result<ComplianceVerdict, ComplianceError> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(ComplianceError::BadFraction(sample_fraction));
    }
    let perf_settings = RunSettings {
        mode: Mode::Performance,
        ..settings.clone()
    };
    let opts = RunOptions {
        retention: Some(Retention::Fraction {
            seed: mix64(settings.seed ^ RETENTION_SALT),
            fraction: sample_fraction,
        }),
        ..RunOptions::default()
    };
    let perf = engine.run_with(sut, &perf_settings, profile, opts)?;
    let retained: Vec<(Vec<usize>, u64)> = perf
        .trace
        .iter()
        .filter_map(|t| {
            let bytes = t.completion.as_ref()?.response_bytes.as_ref()?;
            Some((t.query.sample_indices.clone(), fnv1a64(bytes)))
        })
        .collect();
    if retained.is_empty() {
        return Err(ComplianceError::EmptySubset);
    }

    let acc_settings = RunSettings {
        mode: Mode::Accuracy,
        ..perf.settings.clone()
    };
    let opts = RunOptions {
        schedule: Some(retained.iter().map(|(idx, _)| idx.clone()).collect()),
        ..RunOptions::default()
    };
    let acc = engine.run_with(sut, &acc_settings, profile, opts)?;
    let mismatched = retained
        .iter()
        .zip(&acc.trace)
        .filter(|((_, perf_digest), t)| {
            t.completion.as_ref().map(|c| c.response_digest) != Some(*perf_digest)
        })
        .count()
        + retained.len().abs_diff(acc.trace.len());

    let evidence = BTreeMap::from([
        ("performance_queries".to_string(), perf.trace.len() as f64),
        ("retained".to_string(), retained.len() as f64),
        ("mismatched".to_string(), mismatched as f64),
        ("sample_fraction".to_string(), sample_fraction),
    ]);
    Ok(ComplianceVerdict::new(ComplianceTest::AccuracyInPerf, evidence))
}

/// Knobs for [`run_suite`].
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub ratio_threshold: f64,
    pub sample_fraction: f64,
    pub caching_queries: usize,
    pub determinism_queries: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            caching_queries: DEFAULT_CACHING_QUERIES,
            determinism_queries: DEFAULT_DETERMINISM_QUERIES,
        }
    }
}

/// Runs the selected tests in order against one SUT.
pub fn run_suite(
    engine: &mut Engine,
    sut: &mut dyn SutContract,
    settings: &RunSettings,
    profile: &BenchmarkProfile,
    tests: &[ComplianceTest],
    opts: &SuiteOptions,
) -> Result<Vec<ComplianceVerdict>, ComplianceError> {
    tests
        .iter()
        .map(|t| match t {
            ComplianceTest::Determinism => {
                test_determinism(engine, sut, settings, profile, opts.determinism_queries)
            }
            ComplianceTest::Caching => test_caching(
                engine,
                sut,
                settings,
                profile,
                opts.ratio_threshold,
                opts.caching_queries,
            ),
            ComplianceTest::AccuracyInPerf => {
                test_accuracy_in_perf(engine, sut, settings, profile, opts.sample_fraction)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::find_profile;
    use crate::sut::sim::{LatencyModel, SimulatedSut, SimulatedSutConfig};

    fn ssd() -> BenchmarkProfile {
        find_profile("ssd").unwrap()
    }

    fn settings() -> RunSettings {
        RunSettings {
            min_duration_ns: 1_000_000_000,
            min_query_count: 200,
            sample_bytes: Some(64),
            ..RunSettings::default()
        }
    }

    fn sut(cfg: SimulatedSutConfig) -> SimulatedSut {
        SimulatedSut::new("sim", cfg).unwrap()
    }

    #[test]
    fn determinism_passes() {
        let mut e = Engine::simulated();
        let mut s = sut(SimulatedSutConfig::fixed_ns(1_000_000));
        let v = test_determinism(&mut e, &mut s, &settings(), &ssd(), 64).unwrap();
        assert!(v.passed, "{v}");
        assert!(v.evidence["alt_seed_mismatches"] > 0.0);
        assert!(v.is_consistent());

        let one = RunSettings {
            store_size: 1,
            ..settings()
        };
        let v = test_determinism(&mut e, &mut s, &one, &ssd(), 64).unwrap();
        assert!(v.passed);
        assert_eq!(v.evidence["alt_seed_mismatches"], 0.0);
    }

    #[test]
    fn caching_discriminates() {
        let mut e = Engine::simulated();
        let mut honest = sut(SimulatedSutConfig::fixed_ns(10_000_000));
        let v = test_caching(&mut e, &mut honest, &settings(), &ssd(), 0.9, 200).unwrap();
        assert!(v.passed);
        assert_eq!(v.evidence["ratio"], 1.0);

        let mut cheat = sut(SimulatedSutConfig::fixed_ns(10_000_000).with_cache(8, 0.5));
        let v = test_caching(&mut e, &mut cheat, &settings(), &ssd(), 0.9, 200).unwrap();
        assert!(!v.passed);
        assert_eq!(v.evidence["ratio"], 0.5);
        assert!(v.is_consistent());

        assert!(matches!(
            test_caching(&mut e, &mut honest, &settings(), &ssd(), 0.9, 99),
            Err(ComplianceError::InsufficientQueries(99))
        ));
    }

    #[test]
    fn caching_lognormal_ratio_near_one() {
        let mut e = Engine::simulated();
        let cfg = SimulatedSutConfig::new(LatencyModel::LogNormal {
            mu: (10e6f64).ln(),
            sigma: 0.3,
        })
        .with_seed(5);
        let mut s = sut(cfg);
        let v = test_caching(&mut e, &mut s, &settings(), &ssd(), 0.9, 10_000).unwrap();
        let r = v.evidence["ratio"];
        assert!((0.95..=1.05).contains(&r), "ratio {r}");
        assert!(r != 1.0);
    }

    #[test]
    fn accuracy_in_perf_cases() {
        let mut e = Engine::simulated();
        let mut echo = sut(SimulatedSutConfig::fixed_ns(1_000_000).with_echo());
        let v = test_accuracy_in_perf(&mut e, &mut echo, &settings(), &ssd(), 0.1).unwrap();
        assert!(v.passed, "{v}");
        assert!(v.evidence["retained"] > 0.0);

        let v = test_accuracy_in_perf(&mut e, &mut echo, &settings(), &ssd(), 1.0).unwrap();
        assert_eq!(v.evidence["retained"], v.evidence["performance_queries"]);
        assert!(v.passed);

        let mut cfg = SimulatedSutConfig::fixed_ns(1_000_000).with_echo();
        cfg.truncate_in_performance = true;
        let mut bad = sut(cfg);
        let v = test_accuracy_in_perf(&mut e, &mut bad, &settings(), &ssd(), 0.1).unwrap();
        assert!(!v.passed);
        assert_eq!(v.evidence["mismatched"], v.evidence["retained"]);

        assert!(matches!(
            test_accuracy_in_perf(&mut e, &mut echo, &settings(), &ssd(), 0.0),
            Err(ComplianceError::BadFraction(_))
        ));
    }

    #[test]
    fn verdict_recompute_from_evidence() {
        let mut v = ComplianceVerdict::new(
            ComplianceTest::Caching,
            BTreeMap::from([
                ("p50_unique_ns".into(), 100.0),
                ("p50_repeated_ns".into(), 90.0),
                ("ratio_threshold".into(), 0.9),
            ]),
        );
        assert!(v.passed);
        v.evidence.insert("p50_repeated_ns".into(), 89.0);
        assert!(!v.is_consistent());
        v.evidence.remove("ratio_threshold");
        assert!(v.recompute().is_err());
        assert!("nope".parse::<ComplianceTest>().is_err());
    }
}
