//! Submission bundles on disk and their validation.
//!
//! A bundle directory holds:
//!
//! - `performance.log`: run log with its `S` summary record
//! - `accuracy.txt`: `metric=`, `value=`, optional `reference=` and `profile=`
//! - `system.txt`: `name=`, `category=`, `functional_safety=`,
//!   `publicly_available=`, `auditable_closed=`
//! - `compliance.log`: `V` verdict records

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::log::{parse_run, parse_verdicts, write_run, write_verdicts, LogError, ParsedRun};
use crate::compliance::{ComplianceTest, ComplianceVerdict};
use crate::metrics::{accuracy_gate, MetricsError};
use crate::profiles::{BenchmarkProfile, Mode, Scenario};
use crate::stats::{self, RunSummary};
use crate::sut::{Category, SutDescriptor};

pub const PERFORMANCE_LOG: &str = "performance.log";
pub const ACCURACY_FILE: &str = "accuracy.txt";
pub const SYSTEM_FILE: &str = "system.txt";
pub const COMPLIANCE_LOG: &str = "compliance.log";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing bundle component: {0}")]
    Missing(String),
    #[error("{file}: {source}")]
    Log {
        file: &'static str,
        #[source]
        source: LogError,
    },
    #[error("{file} line {line}: {reason}")]
    KeyValue {
        file: &'static str,
        line: usize,
        reason: String,
    },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyResult {
    pub metric: String,
    pub value: f64,
    /// Used when the profile carries no reference value.
    pub reference: Option<f64>,
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionBundle {
    pub performance: ParsedRun,
    pub accuracy: AccuracyResult,
    pub system: SutDescriptor,
    pub verdicts: Vec<ComplianceVerdict>,
}

fn key_values(file: &'static str, text: &str) -> Result<BTreeMap<String, String>, BundleError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| BundleError::KeyValue {
            file,
            line: i + 1,
            reason,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("`{line}` is not key=value")))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(err(format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(out)
}

fn take<T: std::str::FromStr>(
    file: &'static str,
    kv: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, BundleError> {
    kv.get(key)
        .map(|v| {
            v.parse().map_err(|_| BundleError::KeyValue {
                file,
                line: 0,
                reason: format!("bad value `{v}` for `{key}`"),
            })
        })
        .transpose()
}

fn require<T: std::str::FromStr>(
    file: &'static str,
    kv: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, BundleError> {
    take(file, kv, key)?.ok_or_else(|| BundleError::Missing(format!("{file}: `{key}`")))
}

pub fn parse_accuracy(text: &str) -> Result<AccuracyResult, BundleError> {
    let kv = key_values(ACCURACY_FILE, text)?;
    Ok(AccuracyResult {
        metric: require(ACCURACY_FILE, &kv, "metric")?,
        value: require(ACCURACY_FILE, &kv, "value")?,
        reference: take(ACCURACY_FILE, &kv, "reference")?,
        profile: take(ACCURACY_FILE, &kv, "profile")?,
    })
}

pub fn write_accuracy(a: &AccuracyResult) -> String {
    let mut out = format!("metric={}\nvalue={}\n", a.metric, a.value);
    if let Some(r) = a.reference {
        out += &format!("reference={r}\n");
    }
    if let Some(p) = &a.profile {
        out += &format!("profile={p}\n");
    }
    out
}

pub fn parse_system(text: &str) -> Result<SutDescriptor, BundleError> {
    let kv = key_values(SYSTEM_FILE, text)?;
    let category: String = require(SYSTEM_FILE, &kv, "category")?;
    let category: Category = category.parse().map_err(|reason| BundleError::KeyValue {
        file: SYSTEM_FILE,
        line: 0,
        reason,
    })?;
    Ok(SutDescriptor {
        name: require(SYSTEM_FILE, &kv, "name")?,
        category,
        functional_safety: require(SYSTEM_FILE, &kv, "functional_safety")?,
        publicly_available: require(SYSTEM_FILE, &kv, "publicly_available")?,
        auditable_closed: require(SYSTEM_FILE, &kv, "auditable_closed")?,
    })
}

pub fn write_system(d: &SutDescriptor) -> String {
    format!(
        "name={}\ncategory={}\nfunctional_safety={}\npublicly_available={}\nauditable_closed={}\n",
        d.name, d.category, d.functional_safety, d.publicly_available, d.auditable_closed
    )
}

fn read(dir: &Path, name: &str) -> Result<String, BundleError> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(BundleError::Missing(name.into())),
        Err(e) => Err(BundleError::Io(path.display().to_string(), e)),
    }
}

pub fn load_bundle(dir: &Path) -> Result<SubmissionBundle, BundleError> {
    let performance = parse_run(&read(dir, PERFORMANCE_LOG)?).map_err(|source| BundleError::Log {
        file: PERFORMANCE_LOG,
        source,
    })?;
    let accuracy = parse_accuracy(&read(dir, ACCURACY_FILE)?)?;
    let system = parse_system(&read(dir, SYSTEM_FILE)?)?;
    let verdicts = parse_verdicts(&read(dir, COMPLIANCE_LOG)?).map_err(|source| BundleError::Log {
        file: COMPLIANCE_LOG,
        source,
    })?;
    Ok(SubmissionBundle {
        performance,
        accuracy,
        system,
        verdicts,
    })
}

pub fn write_bundle(dir: &Path, bundle: &SubmissionBundle) -> Result<(), BundleError> {
    let io = |name: &str| {
        let p = dir.join(name).display().to_string();
        move |e| BundleError::Io(p, e)
    };
    fs::create_dir_all(dir).map_err(io("."))?;
    let perf = &bundle.performance;
    let perf_text = match &perf.summary {
        Some(s) => super::log::write_log(&super::log::run_records(&perf.run, Some(s), &perf.verdicts)),
        None => write_run(&perf.run, &perf.verdicts),
    };
    fs::write(dir.join(PERFORMANCE_LOG), perf_text).map_err(io(PERFORMANCE_LOG))?;
    fs::write(dir.join(ACCURACY_FILE), write_accuracy(&bundle.accuracy)).map_err(io(ACCURACY_FILE))?;
    fs::write(dir.join(SYSTEM_FILE), write_system(&bundle.system)).map_err(io(SYSTEM_FILE))?;
    fs::write(dir.join(COMPLIANCE_LOG), write_verdicts(&bundle.verdicts)).map_err(io(COMPLIANCE_LOG))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} {}  {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionReport {
    pub profile: String,
    pub scenario: Scenario,
    pub system: String,
    pub category: Category,
    pub checks: Vec<Check>,
    pub summary: Option<RunSummary>,
}

impl SubmissionReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Tail latency score; latency is reported, not gated.
    pub fn score_p999_ns(&self) -> Option<u64> {
        self.summary.as_ref().map(|s| s.p999_ns)
    }

    /// Overruns, reported next to the score for Constant Stream.
    pub fn score_overruns(&self) -> Option<u64> {
        match self.scenario {
            Scenario::ConstantStream => self.summary.as_ref().map(|s| s.overrun_count),
            Scenario::SingleStream => None,
        }
    }
}

impl fmt::Display for SubmissionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "submission: {} / {} / {} ({})",
            self.profile, self.scenario, self.system, self.category
        )?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        if let Some(p) = self.score_p999_ns() {
            write!(f, "  score: p999 {p} ns")?;
            if let Some(o) = self.score_overruns() {
                write!(f, ", overruns {o}")?;
            }
            writeln!(f)?;
        }
        write!(f, "  overall: {}", if self.is_valid() { "VALID" } else { "INVALID" })
    }
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

/// Validates a bundle against a profile. Errors only when a reference
/// accuracy is unavailable; every other problem becomes a failed check.
pub fn validate_submission(
    bundle: &SubmissionBundle,
    profile: &BenchmarkProfile,
) -> Result<SubmissionReport, BundleError> {
    let run = &bundle.performance.run;
    let mut checks = Vec::new();

    let mut lineage = Vec::new();
    if run.profile != profile.name {
        lineage.push(format!("log profile `{}`", run.profile));
    }
    if let Some(p) = &bundle.accuracy.profile {
        if p != &profile.name {
            lineage.push(format!("accuracy profile `{p}`"));
        }
    }
    if run.settings.mode != Mode::Performance {
        lineage.push("log is not a performance run".into());
    }
    checks.push(check(
        "lineage",
        lineage.is_empty(),
        if lineage.is_empty() {
            format!("all components reference {}", profile.name)
        } else {
            format!("expected {}: {}", profile.name, lineage.join("; "))
        },
    ));

    checks.push(check(
        "run_completed",
        run.failure.is_none(),
        run.failure.clone().unwrap_or_else(|| "no failure record".into()),
    ));

    let recomputed = stats::summarize(run);
    let summary_ok = match (&recomputed, &bundle.performance.summary) {
        (Ok(r), Some(s)) if r == s => (true, "embedded summary matches re-analysis".to_string()),
        (Ok(_), Some(_)) => (false, "embedded summary differs from re-analysis".to_string()),
        (Ok(_), None) => (false, "log has no summary record".to_string()),
        (Err(e), _) => (false, e.to_string()),
    };
    checks.push(check("summary", summary_ok.0, summary_ok.1));

    match &recomputed {
        Ok(s) => {
            let v = stats::check_validity(s, &run.settings);
            let detail = if v.messages.is_empty() {
                format!("{} queries over {} ns", s.count, s.duration_ns)
            } else {
                v.messages.join("; ")
            };
            checks.push(check("validity", v.is_valid(), detail));
        }
        Err(e) => checks.push(check("validity", false, e.to_string())),
    }

    let reference = profile
        .reference_metric
        .or(bundle.accuracy.reference)
        .ok_or_else(|| BundleError::Missing(format!("reference accuracy for {}", profile.name)))?;
    let gate = accuracy_gate(bundle.accuracy.value, reference, profile.accuracy_constraint)?;
    checks.push(check(
        "accuracy_gate",
        gate.passed,
        format!(
            "{} {} {} threshold {} ({} x {})",
            bundle.accuracy.metric,
            gate.measured,
            if gate.passed { ">=" } else { "<" },
            gate.threshold,
            gate.reference,
            gate.constraint
        ),
    ));

    let mut problems = Vec::new();
    for t in ComplianceTest::ALL {
        match bundle.verdicts.iter().find(|v| v.test_name == t.as_str()) {
            None => problems.push(format!("{t} missing")),
            Some(v) if !v.is_consistent() => problems.push(format!("{t} evidence disagrees with verdict")),
            Some(v) if !v.passed => problems.push(format!("{t} failed")),
            Some(_) => {}
        }
    }
    checks.push(check(
        "compliance",
        problems.is_empty(),
        if problems.is_empty() {
            "all compliance tests passed".to_string()
        } else {
            problems.join("; ")
        },
    ));

    let bad = bundle.system.category_violations();
    checks.push(check(
        "category",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} flags consistent", bundle.system.category)
        } else {
            format!("{} inconsistent: {}", bundle.system.category, bad.join(", "))
        },
    ));

    Ok(SubmissionReport {
        profile: profile.name.clone(),
        scenario: run.settings.scenario,
        system: bundle.system.name.clone(),
        category: bundle.system.category,
        checks,
        summary: recomputed.ok(),
    })
}
