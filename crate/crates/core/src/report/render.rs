use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::bundle::SubmissionReport;
use crate::profiles::{builtin_profiles, Scenario};
use crate::sut::Category;

#[derive(Default)]
struct Cell {
    valid: usize,
    best_p999_ns: Option<u64>,
    categories: BTreeSet<Category>,
}

fn ms(ns: u64) -> String {
    format!("{}.{:06}", ns / 1_000_000, ns % 1_000_000)
}

/// Table of valid submissions per (profile, scenario). Every built-in
/// profile/scenario pair gets a row; counts and categories cover valid
/// submissions only.
pub fn render_report(reports: &[SubmissionReport]) -> String {
    let mut cells: BTreeMap<(String, Scenario), Cell> = BTreeMap::new();
    for p in builtin_profiles() {
        cells.entry((p.name.clone(), Scenario::SingleStream)).or_default();
        if p.constant_stream_hz.is_some() {
            cells.entry((p.name, Scenario::ConstantStream)).or_default();
        }
    }
    for r in reports {
        let cell = cells.entry((r.profile.clone(), r.scenario)).or_default();
        if !r.is_valid() {
            continue;
        }
        cell.valid += 1;
        cell.categories.insert(r.category);
        if let Some(p) = r.score_p999_ns() {
            cell.best_p999_ns = Some(cell.best_p999_ns.map_or(p, |b| b.min(p)));
        }
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<16} {:>5} {:>16}  categories",
        "profile", "scenario", "valid", "best_p999_ms"
    );
    for ((profile, scenario), cell) in &cells {
        let best = cell.best_p999_ns.map(ms).unwrap_or_else(|| "-".into());
        let cats = if cell.categories.is_empty() {
            "-".to_string()
        } else {
            cell.categories
                .iter()
                .map(|c| c.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>5} {:>16}  {}",
            profile,
            scenario.as_str(),
            cell.valid,
            best,
            cats
        );
    }
    out
}
