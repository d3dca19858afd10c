//! Line-oriented run log.
//!
//! | tag | fields |
//! |-----|--------|
//! | `H` | version, profile, scenario, mode, seed, min_duration_ns, min_query_count, store_size, sample_bytes?, rate_override_hz?, sut_endpoint |
//! | `I` | query_id, scheduled_ns?, issue_ns, sample_index... |
//! | `C` | query_id, completion_ns, response_digest (16 lowercase hex digits) |
//! | `W` | wall_start_ns, wall_end_ns |
//! | `F` | failure reason (rest of line) |
//! | `S` | count, min_ns, mean_ns, max_ns, p50_ns, p90_ns, p99_ns, p999_ns, overrun_count, duration_ns, completed_per_second |
//! | `V` | test_name, 0/1, key=value... |
//!
//! `?` marks a field left empty when absent. Integers are decimal, floats use
//! the shortest representation that parses back to the same value.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::compliance::ComplianceVerdict;
use crate::engine::{Completion, Query, RunLog, TraceEntry};
use crate::profiles::RunSettings;
use crate::stats::{self, RunSummary, StatsError};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Header(RunSettings),
    Issue(Query),
    Complete {
        query_id: u64,
        completion_ns: u64,
        response_digest: u64,
    },
    Wall {
        start_ns: u64,
        end_ns: u64,
    },
    Failure(String),
    Summary(RunSummary),
    Verdict(ComplianceVerdict),
}

#[derive(Debug, Error, PartialEq)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported log format version {0}")]
    Version(String),
    #[error("log is empty")]
    Empty,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn write_record(out: &mut String, record: &LogRecord) {
    match record {
        LogRecord::Header(s) => {
            let _ = writeln!(
                out,
                "H,{LOG_FORMAT_VERSION},{},{},{},{},{},{},{},{},{},{}",
                s.profile.as_deref().unwrap_or(""),
                s.scenario,
                s.mode,
                s.seed,
                s.min_duration_ns,
                s.min_query_count,
                s.store_size,
                opt(&s.sample_bytes),
                opt(&s.rate_override_hz),
                s.sut_endpoint
            );
        }
        LogRecord::Issue(q) => {
            let _ = write!(out, "I,{},{},{}", q.query_id, opt(&q.scheduled_ns), q.issue_ns);
            for i in &q.sample_indices {
                let _ = write!(out, ",{i}");
            }
            out.push('\n');
        }
        LogRecord::Complete {
            query_id,
            completion_ns,
            response_digest,
        } => {
            let _ = writeln!(out, "C,{query_id},{completion_ns},{response_digest:016x}");
        }
        LogRecord::Wall { start_ns, end_ns } => {
            let _ = writeln!(out, "W,{start_ns},{end_ns}");
        }
        LogRecord::Failure(reason) => {
            let _ = writeln!(out, "F,{}", reason.replace(['\n', '\r'], " "));
        }
        LogRecord::Summary(s) => {
            let _ = writeln!(
                out,
                "S,{},{},{},{},{},{},{},{},{},{},{}",
                s.count,
                s.min_ns,
                s.mean_ns,
                s.max_ns,
                s.p50_ns,
                s.p90_ns,
                s.p99_ns,
                s.p999_ns,
                s.overrun_count,
                s.duration_ns,
                s.completed_per_second
            );
        }
        LogRecord::Verdict(v) => {
            let _ = write!(out, "V,{},{}", v.test_name, u8::from(v.passed));
            for (k, val) in &v.evidence {
                let _ = write!(out, ",{k}={val}");
            }
            out.push('\n');
        }
    }
}

pub fn write_log(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        write_record(&mut out, r);
    }
    out
}

struct Fields<'a> {
    line: usize,
    parts: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn err(&self, reason: impl Into<String>) -> LogError {
        LogError::Parse {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn expect_len(&self, n: usize) -> Result<(), LogError> {
        if self.parts.len() != n {
            return Err(self.err(format!(
                "`{}` record needs {} fields, found {}",
                self.parts[0],
                n - 1,
                self.parts.len() - 1
            )));
        }
        Ok(())
    }

    fn num<T: std::str::FromStr>(&self, i: usize, what: &str) -> Result<T, LogError> {
        self.parts[i]
            .parse()
            .map_err(|_| self.err(format!("bad {what} `{}`", self.parts[i])))
    }

    fn opt_num<T: std::str::FromStr>(&self, i: usize, what: &str) -> Result<Option<T>, LogError> {
        if self.parts[i].is_empty() {
            Ok(None)
        } else {
            self.num(i, what).map(Some)
        }
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<LogRecord, LogError> {
    let f = Fields {
        line: line_no,
        parts: line.split(',').collect(),
    };
    match f.parts[0] {
        "H" => {
            if f.parts.len() < 2 {
                return Err(f.err("header lacks a version"));
            }
            if f.parts[1] != LOG_FORMAT_VERSION.to_string() {
                return Err(LogError::Version(f.parts[1].to_string()));
            }
            f.expect_len(12)?;
            let profile = f.parts[2];
            Ok(LogRecord::Header(RunSettings {
                profile: (!profile.is_empty()).then(|| profile.to_string()),
                scenario: f.parts[3].parse().map_err(|e: String| f.err(e))?,
                mode: f.parts[4].parse().map_err(|e: String| f.err(e))?,
                seed: f.num(5, "seed")?,
                min_duration_ns: f.num(6, "min_duration_ns")?,
                min_query_count: f.num(7, "min_query_count")?,
                store_size: f.num(8, "store_size")?,
                sample_bytes: f.opt_num(9, "sample_bytes")?,
                rate_override_hz: f.opt_num(10, "rate_override_hz")?,
                sut_endpoint: f.parts[11].to_string(),
            }))
        }
        "I" => {
            if f.parts.len() < 5 {
                return Err(f.err(format!(
                    "`I` record needs at least 4 fields, found {}",
                    f.parts.len() - 1
                )));
            }
            let sample_indices = (4..f.parts.len())
                .map(|i| f.num(i, "sample index"))
                .collect::<Result<_, _>>()?;
            Ok(LogRecord::Issue(Query {
                query_id: f.num(1, "query id")?,
                scheduled_ns: f.opt_num(2, "scheduled_ns")?,
                issue_ns: f.num(3, "issue_ns")?,
                sample_indices,
            }))
        }
        "C" => {
            f.expect_len(4)?;
            let hex = f.parts[3];
            if hex.len() != 16 || !hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return Err(f.err(format!("digest `{hex}` is not 16 lowercase hex digits")));
            }
            Ok(LogRecord::Complete {
                query_id: f.num(1, "query id")?,
                completion_ns: f.num(2, "completion_ns")?,
                response_digest: u64::from_str_radix(hex, 16).map_err(|e| f.err(e.to_string()))?,
            })
        }
        "W" => {
            f.expect_len(3)?;
            Ok(LogRecord::Wall {
                start_ns: f.num(1, "wall start")?,
                end_ns: f.num(2, "wall end")?,
            })
        }
        "F" => Ok(LogRecord::Failure(
            line.strip_prefix("F,").unwrap_or("").to_string(),
        )),
        "S" => {
            f.expect_len(12)?;
            Ok(LogRecord::Summary(RunSummary {
                count: f.num(1, "count")?,
                min_ns: f.num(2, "min_ns")?,
                mean_ns: f.num(3, "mean_ns")?,
                max_ns: f.num(4, "max_ns")?,
                p50_ns: f.num(5, "p50_ns")?,
                p90_ns: f.num(6, "p90_ns")?,
                p99_ns: f.num(7, "p99_ns")?,
                p999_ns: f.num(8, "p999_ns")?,
                overrun_count: f.num(9, "overrun_count")?,
                duration_ns: f.num(10, "duration_ns")?,
                completed_per_second: f.num(11, "completed_per_second")?,
            }))
        }
        "V" => {
            if f.parts.len() < 3 {
                return Err(f.err("`V` record needs a test name and a result"));
            }
            let passed = match f.parts[2] {
                "0" => false,
                "1" => true,
                other => return Err(f.err(format!("verdict must be 0 or 1, got `{other}`"))),
            };
            let mut evidence = BTreeMap::new();
            for kv in &f.parts[3..] {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| f.err(format!("evidence `{kv}` is not key=value")))?;
                let v: f64 = v.parse().map_err(|_| f.err(format!("bad evidence value `{v}`")))?;
                if evidence.insert(k.to_string(), v).is_some() {
                    return Err(f.err(format!("duplicate evidence key `{k}`")));
                }
            }
            Ok(LogRecord::Verdict(ComplianceVerdict {
                test_name: f.parts[1].to_string(),
                passed,
                evidence,
            }))
        }
        other => Err(f.err(format!("unknown record tag `{other}`"))),
    }
}

/// Parses every line; structural ordering is checked by [`run_from_records`].
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, LogError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| parse_line(i + 1, line))
        .collect()
}

/// Compliance verdict file: `V` records, `#` comments and blank lines.
pub fn parse_verdicts(text: &str) -> Result<Vec<ComplianceVerdict>, LogError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_line(i + 1, line)? {
            LogRecord::Verdict(v) => out.push(v),
            _ => {
                return Err(LogError::Parse {
                    line: i + 1,
                    reason: "only `V` records are allowed here".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_verdicts(verdicts: &[ComplianceVerdict]) -> String {
    let records: Vec<LogRecord> = verdicts.iter().cloned().map(LogRecord::Verdict).collect();
    format!(
        "# compliance tests ({})\n{}",
        crate::compliance::VERDICT_ORIGIN,
        write_log(&records)
    )
}

/// A run log plus whatever computed records followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRun {
    pub run: RunLog,
    pub summary: Option<RunSummary>,
    pub verdicts: Vec<ComplianceVerdict>,
}

/// Records for a run in emission order: issues and completions interleaved by
/// time (completions first on ties), then wall times, failure, summary and
/// verdicts.
pub fn run_records(
    run: &RunLog,
    summary: Option<&RunSummary>,
    verdicts: &[ComplianceVerdict],
) -> Vec<LogRecord> {
    let mut settings = run.settings.clone();
    settings.profile = Some(run.profile.clone());
    let mut records = vec![LogRecord::Header(settings)];

    let mut events: Vec<(u64, u8, usize, LogRecord)> = Vec::with_capacity(run.trace.len() * 2);
    for (pos, t) in run.trace.iter().enumerate() {
        events.push((t.query.issue_ns, 1, pos, LogRecord::Issue(t.query.clone())));
        if let Some(c) = &t.completion {
            events.push((
                c.completion_ns,
                0,
                pos,
                LogRecord::Complete {
                    query_id: c.query_id,
                    completion_ns: c.completion_ns,
                    response_digest: c.response_digest,
                },
            ));
        }
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));
    // a completion never precedes its own issue, even if stamped earlier
    let mut issued = vec![false; run.trace.len()];
    let mut held: Vec<(usize, LogRecord)> = Vec::new();
    for (_, kind, pos, rec) in events {
        if kind == 1 {
            records.push(rec);
            issued[pos] = true;
            let (ready, rest): (Vec<_>, Vec<_>) = held.into_iter().partition(|(p, _)| issued[*p]);
            held = rest;
            records.extend(ready.into_iter().map(|(_, r)| r));
        } else if issued[pos] {
            records.push(rec);
        } else {
            held.push((pos, rec));
        }
    }
    records.extend(held.into_iter().map(|(_, r)| r));

    records.push(LogRecord::Wall {
        start_ns: run.wall_start_ns,
        end_ns: run.wall_end_ns,
    });
    if let Some(f) = &run.failure {
        records.push(LogRecord::Failure(f.clone()));
    }
    if let Some(s) = summary {
        records.push(LogRecord::Summary(s.clone()));
    }
    records.extend(verdicts.iter().cloned().map(LogRecord::Verdict));
    records
}

/// Full log text for a run, with its summary when the run is complete.
pub fn write_run(run: &RunLog, verdicts: &[ComplianceVerdict]) -> String {
    let summary = run.summary().ok();
    write_log(&run_records(run, summary.as_ref(), verdicts))
}

/// Rebuilds a run from records, checking record order.
pub fn run_from_records(records: &[LogRecord]) -> Result<ParsedRun, LogError> {
    let at = |line: usize, reason: String| LogError::Parse { line, reason };
    let mut iter = records.iter().enumerate();
    let settings = match iter.next() {
        Some((_, LogRecord::Header(s))) => s.clone(),
        Some(_) => return Err(at(1, "first record must be the `H` header".into())),
        None => return Err(LogError::Empty),
    };

    #[derive(PartialEq, PartialOrd)]
    enum Stage {
        Events,
        Wall,
        Failure,
        Summary,
        Verdicts,
    }
    let mut stage = Stage::Events;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut pos_of: HashMap<u64, usize> = HashMap::new();
    let (mut wall_start_ns, mut wall_end_ns) = (0, 0);
    let mut failure = None;
    let mut summary = None;
    let mut verdicts = Vec::new();

    for (i, rec) in iter {
        let line = i + 1;
        let next = match rec {
            LogRecord::Header(_) => return Err(at(line, "repeated `H` header".into())),
            LogRecord::Issue(_) | LogRecord::Complete { .. } => Stage::Events,
            LogRecord::Wall { .. } => Stage::Wall,
            LogRecord::Failure(_) => Stage::Failure,
            LogRecord::Summary(_) => Stage::Summary,
            LogRecord::Verdict(_) => Stage::Verdicts,
        };
        if next < stage || (next == stage && !matches!(next, Stage::Events | Stage::Verdicts)) {
            return Err(at(line, "record out of order".into()));
        }
        stage = next;
        match rec {
            LogRecord::Issue(q) => {
                if pos_of.insert(q.query_id, trace.len()).is_some() {
                    return Err(at(line, format!("query {} issued twice", q.query_id)));
                }
                trace.push(TraceEntry {
                    query: q.clone(),
                    completion: None,
                });
            }
            LogRecord::Complete {
                query_id,
                completion_ns,
                response_digest,
            } => {
                let pos = *pos_of
                    .get(query_id)
                    .ok_or_else(|| at(line, format!("completion for unissued query {query_id}")))?;
                let slot = &mut trace[pos].completion;
                if slot.is_some() {
                    return Err(at(line, format!("query {query_id} completed twice")));
                }
                *slot = Some(Completion {
                    query_id: *query_id,
                    completion_ns: *completion_ns,
                    response_digest: *response_digest,
                    response_bytes: None,
                });
            }
            LogRecord::Wall { start_ns, end_ns } => {
                wall_start_ns = *start_ns;
                wall_end_ns = *end_ns;
            }
            LogRecord::Failure(f) => failure = Some(f.clone()),
            LogRecord::Summary(s) => summary = Some(s.clone()),
            LogRecord::Verdict(v) => verdicts.push(v.clone()),
            LogRecord::Header(_) => unreachable!(),
        }
    }

    let mut run = RunLog {
        profile: settings.profile.clone().unwrap_or_default(),
        settings,
        trace,
        overrun_count: 0,
        wall_start_ns,
        wall_end_ns,
        failure,
    };
    run.overrun_count = stats::count_overruns(&run);
    Ok(ParsedRun {
        run,
        summary,
        verdicts,
    })
}

pub fn parse_run(text: &str) -> Result<ParsedRun, LogError> {
    run_from_records(&parse_log(text)?)
}

/// Summary recomputed from the parsed trace with the in-run algorithm.
pub fn recompute_summary(run: &RunLog) -> Result<RunSummary, LogError> {
    Ok(stats::summarize(run)?)
}
