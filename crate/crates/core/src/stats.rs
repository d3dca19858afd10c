//! Order-statistic percentiles, sample-size planning and run summaries.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::engine::RunLog;
use crate::profiles::RunSettings;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    Empty,
    #[error("percentile {0} is outside (0, 1)")]
    PercentileOutOfRange(f64),
    #[error("confidence {0} is outside (0.5, 1)")]
    ConfidenceOutOfRange(f64),
    #[error("log is incomplete: query {0} has no completion")]
    Incomplete(u64),
    #[error("completion for query {query_id} precedes its issue")]
    NegativeLatency { query_id: u64 },
}

/// 1-based rank `ceil(p * n)` of the p-th percentile among `n` samples.
///
/// A product within float noise of an integer is taken as that integer, so
/// `rank(0.9, 10)` is 9 and not 10.
pub fn percentile_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

/// The `ceil(p * N)`-th smallest sample. Never interpolates, so the result is
/// always an observed value.
pub fn percentile(samples: &[u64], p: f64) -> Result<u64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::PercentileOutOfRange(p));
    }
    let k = percentile_rank(p, samples.len());
    let mut scratch = samples.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable(k - 1);
    Ok(*kth)
}

/// Percentile over data already sorted ascending.
fn percentile_sorted(sorted: &[u64], p: f64) -> u64 {
    sorted[percentile_rank(p, sorted.len()) - 1]
}

/// Two-sided standard normal quantile for `confidence`.
pub fn two_sided_z(confidence: f64) -> Result<f64, StatsError> {
    if !(confidence > 0.5 && confidence < 1.0) {
        return Err(StatsError::ConfidenceOutOfRange(confidence));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf((1.0 + confidence) / 2.0))
}

/// Minimum number of latencies so that the p-quantile's rank is pinned to
/// within `(1 - p) / 2` of N at the given confidence (normal approximation of
/// the binomial rank).
pub fn min_query_count(p: f64, confidence: f64) -> Result<u64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::PercentileOutOfRange(p));
    }
    let z = two_sided_z(confidence)?;
    let margin = (1.0 - p) / 2.0;
    Ok((z * z * p * (1.0 - p) / (margin * margin)).ceil() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub count: u64,
    pub min_ns: u64,
    pub mean_ns: u64,
    pub max_ns: u64,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub overrun_count: u64,
    pub duration_ns: u64,
    pub completed_per_second: f64,
}

/// Per-query latencies, in trace order.
///
/// Constant Stream latency starts at the scheduled time so that late issuance
/// is charged to the run; otherwise latency starts at issue.
pub fn latencies(log: &RunLog) -> Result<Vec<u64>, StatsError> {
    log.trace
        .iter()
        .map(|entry| {
            let c = entry
                .completion
                .as_ref()
                .ok_or(StatsError::Incomplete(entry.query.query_id))?;
            let origin = entry.query.scheduled_ns.unwrap_or(entry.query.issue_ns);
            c.completion_ns
                .checked_sub(origin)
                .ok_or(StatsError::NegativeLatency {
                    query_id: entry.query.query_id,
                })
        })
        .collect()
}

/// Queries that completed after their successor's scheduled issue time.
pub fn count_overruns(log: &RunLog) -> u64 {
    log.trace
        .windows(2)
        .filter(|w| match (&w[0].completion, w[1].query.scheduled_ns) {
            (Some(c), Some(next)) => c.completion_ns > next,
            _ => false,
        })
        .count() as u64
}

pub fn summarize(log: &RunLog) -> Result<RunSummary, StatsError> {
    let mut lat = latencies(log)?;
    if lat.is_empty() {
        return Err(StatsError::Empty);
    }
    lat.sort_unstable();
    let count = lat.len() as u64;
    let total: u128 = lat.iter().map(|&x| x as u128).sum();
    let duration_ns = log
        .trace
        .iter()
        .filter_map(|e| e.completion.as_ref().map(|c| c.completion_ns))
        .max()
        .unwrap_or(0);
    let completed_per_second = if duration_ns == 0 {
        0.0
    } else {
        count as f64 * 1e9 / duration_ns as f64
    };
    Ok(RunSummary {
        count,
        min_ns: lat[0],
        mean_ns: (total / count as u128) as u64,
        max_ns: lat[lat.len() - 1],
        p50_ns: percentile_sorted(&lat, 0.5),
        p90_ns: percentile_sorted(&lat, 0.9),
        p99_ns: percentile_sorted(&lat, 0.99),
        p999_ns: percentile_sorted(&lat, 0.999),
        overrun_count: count_overruns(log),
        duration_ns,
        completed_per_second,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub duration_ok: bool,
    pub query_count_ok: bool,
    pub messages: Vec<String>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.duration_ok && self.query_count_ok
    }
}

pub fn check_validity(summary: &RunSummary, settings: &RunSettings) -> ValidityReport {
    let duration_ok = summary.duration_ns >= settings.min_duration_ns;
    let query_count_ok = summary.count >= settings.min_query_count;
    let mut messages = Vec::new();
    if !duration_ok {
        messages.push(format!(
            "run lasted {} ns, {} ns short of the {} ns minimum",
            summary.duration_ns,
            settings.min_duration_ns - summary.duration_ns,
            settings.min_duration_ns
        ));
    }
    if !query_count_ok {
        messages.push(format!(
            "{} queries completed, {} short of the {} minimum",
            summary.count,
            settings.min_query_count - summary.count,
            settings.min_query_count
        ));
    }
    ValidityReport {
        duration_ok,
        query_count_ok,
        messages,
    }
}
