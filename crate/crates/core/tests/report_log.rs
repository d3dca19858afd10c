mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rtbench::compliance::ComplianceVerdict;
use rtbench::engine::Query;
use rtbench::profiles::{Mode, RunSettings, Scenario};
use rtbench::report::{
    parse_log, parse_run, recompute_summary, run_records, write_log, write_run, LogRecord,
};
use rtbench::stats::RunSummary;

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,11}"
}

fn settings() -> impl Strategy<Value = RunSettings> {
    (
        proptest::option::of(token()),
        any::<bool>(),
        any::<bool>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<usize>(),
        proptest::option::of(any::<usize>()),
        proptest::option::of(1e-3f64..1e6),
        "(sim|tcp):[a-z0-9.:=]{1,20}",
    )
        .prop_map(|(profile, cs, acc, seed, dur, count, store, bytes, rate, ep)| RunSettings {
            profile,
            scenario: if cs { Scenario::ConstantStream } else { Scenario::SingleStream },
            mode: if acc { Mode::Accuracy } else { Mode::Performance },
            seed,
            min_duration_ns: dur,
            min_query_count: count,
            store_size: store,
            sample_bytes: bytes,
            rate_override_hz: rate,
            sut_endpoint: ep,
        })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e9f64..1e9]
}

fn record() -> impl Strategy<Value = LogRecord> {
    prop_oneof![
        settings().prop_map(LogRecord::Header),
        (any::<u64>(), proptest::option::of(any::<u64>()), any::<u64>(), prop::collection::vec(any::<usize>(), 1..7))
            .prop_map(|(query_id, scheduled_ns, issue_ns, sample_indices)| LogRecord::Issue(Query {
                query_id,
                sample_indices,
                scheduled_ns,
                issue_ns,
            })),
        (any::<u64>(), any::<u64>(), any::<u64>()).prop_map(|(query_id, completion_ns, response_digest)| {
            LogRecord::Complete { query_id, completion_ns, response_digest }
        }),
        (any::<u64>(), any::<u64>()).prop_map(|(start_ns, end_ns)| LogRecord::Wall { start_ns, end_ns }),
        "[ -~]{0,40}".prop_map(LogRecord::Failure),
        (prop::array::uniform10(any::<u64>()), finite()).prop_map(|(v, cps)| LogRecord::Summary(RunSummary {
            count: v[0],
            min_ns: v[1],
            mean_ns: v[2],
            max_ns: v[3],
            p50_ns: v[4],
            p90_ns: v[5],
            p99_ns: v[6],
            p999_ns: v[7],
            overrun_count: v[8],
            duration_ns: v[9],
            completed_per_second: cps,
        })),
        (token(), any::<bool>(), prop::collection::btree_map(token(), finite(), 0..5)).prop_map(
            |(test_name, passed, evidence)| LogRecord::Verdict(ComplianceVerdict {
                test_name,
                passed,
                evidence,
            })
        ),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn records_round_trip(records in prop::collection::vec(record(), 0..30)) {
        let text = write_log(&records);
        prop_assert_eq!(parse_log(&text).unwrap(), records);
    }
}

#[test]
fn matrix_runs_round_trip_and_reanalyse() {
    for (name, run) in common::run_matrix(200) {
        let text = write_run(&run, &[]);
        let parsed = parse_run(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parsed.run, run, "{name}");
        let embedded = parsed.summary.expect("summary record");
        assert_eq!(embedded, run.summary().unwrap(), "{name}");
        let again = recompute_summary(&parsed.run).unwrap();
        assert_eq!(again, embedded, "{name}");
        assert_eq!(again.completed_per_second.to_bits(), embedded.completed_per_second.to_bits());
        assert_eq!(write_run(&parsed.run, &[]), text, "{name}");
    }
}

#[test]
fn emission_order_interleaves_by_time() {
    let (_, run) = common::run_matrix(5)
        .into_iter()
        .find(|(n, _)| n.starts_with("ssd_resnet50/single_stream/fixed/1"))
        .unwrap();
    let recs = run_records(&run, None, &[]);
    let tags: String = write_log(&recs)
        .lines()
        .map(|l| l.chars().next().unwrap())
        .collect();
    assert_eq!(tags, "HICICICICICW");
}

#[test]
fn verdicts_follow_summary() {
    let (_, run) = common::run_matrix(5).into_iter().next().unwrap();
    let v = ComplianceVerdict {
        test_name: "caching".into(),
        passed: true,
        evidence: BTreeMap::from([("ratio".into(), 1.0)]),
    };
    let text = write_run(&run, std::slice::from_ref(&v));
    assert!(text.ends_with("V,caching,1,ratio=1\n"));
    assert_eq!(parse_run(&text).unwrap().verdicts, vec![v]);
}

#[test]
fn tampered_field_count_names_line() {
    let (_, run) = common::run_matrix(5).into_iter().next().unwrap();
    let text = write_run(&run, &[]);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    assert!(lines[2].starts_with("C,"));
    lines[2].push_str(",9");
    let tampered = lines.join("\n");
    let err = parse_run(&tampered).unwrap_err().to_string();
    assert_eq!(err, "line 3: `C` record needs 3 fields, found 4");
}
