//! Independent reference implementations and fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use rtbench::metrics::{BBox, Frame};
use rtbench::profiles::RunSettings;

/// Sort-based order statistic at rank ceil(p * n), with p given in
/// parts per thousand so the rank is exact integer arithmetic.
pub fn sorted_percentile_permille(samples: &[u64], permille: u64) -> u64 {
    let mut v = samples.to_vec();
    v.sort_unstable();
    let n = v.len() as u64;
    let rank = (permille * n).div_ceil(1000).max(1);
    v[(rank - 1) as usize]
}

/// round(i * 1e9 / rate) with half-up rounding, for integer rates.
pub fn scheduled_ns(i: u64, rate_hz: u64) -> u64 {
    let num = i as u128 * 1_000_000_000 * 2 + rate_hz as u128;
    (num / (2 * rate_hz as u128)) as u64
}

/// Settings for short runs on a simulated clock.
pub fn short_settings(queries: u64) -> RunSettings {
    RunSettings {
        min_duration_ns: 0,
        min_query_count: queries,
        sample_bytes: Some(64),
        ..RunSettings::default()
    }
}

fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let i = w * h;
    i / (area(a) + area(b) - i)
}

/// True positives among the first `k` ranked predictions, recomputing the
/// greedy assignment from scratch.
fn true_positives(ranked: &[(usize, BBox)], frames: &[Frame], class: u32, k: usize, thr: f64) -> usize {
    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    let mut tp = 0;
    for (fi, p) in &ranked[..k] {
        let mut pick: Option<usize> = None;
        let mut pick_iou = -1.0;
        for (gi, g) in frames[*fi].ground_truth.iter().enumerate() {
            if g.class_id != class || used[*fi][gi] {
                continue;
            }
            let o = overlap(p, g);
            if o >= thr && o > pick_iou {
                pick = Some(gi);
                pick_iou = o;
            }
        }
        if let Some(gi) = pick {
            used[*fi][gi] = true;
            tp += 1;
        }
    }
    tp
}

/// AP as the integral over recall of the best precision achievable at that
/// recall or higher, enumerating every score-threshold cut.
pub fn brute_force_ap(frames: &[Frame], class: u32, thr: f64) -> f64 {
    let n_gt = frames
        .iter()
        .flat_map(|f| &f.ground_truth)
        .filter(|g| g.class_id == class)
        .count();
    let mut ranked: Vec<(usize, BBox)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for p in &f.predictions {
            if p.class_id == class {
                ranked.push((fi, *p));
            }
        }
    }
    if n_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    // insertion sort: stable, descending score
    for i in 1..ranked.len() {
        let mut j = i;
        while j > 0 && ranked[j - 1].1.score < ranked[j].1.score {
            ranked.swap(j - 1, j);
            j -= 1;
        }
    }
    let cuts: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = true_positives(&ranked, frames, class, k, thr);
            (tp as f64 / n_gt as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut levels: Vec<f64> = cuts.iter().map(|c| c.0).filter(|r| *r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut prev = 0.0;
    let mut total = 0.0;
    for r in levels {
        let best = cuts
            .iter()
            .filter(|c| c.0 >= r)
            .map(|c| c.1)
            .fold(0.0, f64::max);
        total += (r - prev) * best;
        prev = r;
    }
    total
}

pub fn brute_force_map(frames: &[Frame], thr: f64) -> Option<f64> {
    let mut classes: Vec<u32> = frames
        .iter()
        .flat_map(|f| f.ground_truth.iter().map(|g| g.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return None;
    }
    let sum: f64 = classes.iter().map(|&c| brute_force_ap(frames, c, thr)).sum();
    Some(sum / classes.len() as f64)
}

/// Candidate boxes on a small grid so overlaps above and below 0.5 occur.
pub fn grid_box(code: u8) -> BBox {
    const BOXES: [(f64, f64, f64, f64); 4] = [
        (0.0, 0.0, 4.0, 4.0),
        (1.0, 0.0, 5.0, 4.0),
        (2.0, 2.0, 6.0, 6.0),
        (0.0, 0.0, 4.0, 3.0),
    ];
    let (x1, y1, x2, y2) = BOXES[code as usize % BOXES.len()];
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// Every single-frame, single-class instance with up to 3 ground truths and
/// up to 3 predictions drawn from the grid boxes and two score levels.
pub fn exhaustive_instances() -> Vec<Frame> {
    let mut out = Vec::new();
    for n_gt in 0..=3u32 {
        for n_pred in 0..=3u32 {
            let gt_choices = 4u32.pow(n_gt);
            let pred_choices = 8u32.pow(n_pred);
            for g in 0..gt_choices {
                for p in 0..pred_choices {
                    let ground_truth = (0..n_gt)
                        .map(|i| grid_box(((g / 4u32.pow(i)) % 4) as u8))
                        .collect();
                    let predictions = (0..n_pred)
                        .map(|i| {
                            let code = (p / 8u32.pow(i)) % 8;
                            let score = if code >= 4 { 0.9 } else { 0.4 };
                            grid_box(code as u8).with_score(score).unwrap()
                        })
                        .collect();
                    out.push(Frame {
                        predictions,
                        ground_truth,
                    });
                }
            }
        }
    }
    out
}

use rtbench::compliance::{run_suite, ComplianceTest, SuiteOptions};
use rtbench::engine::{Engine, RunLog};
use rtbench::profiles::{builtin_profiles, find_profile, Scenario};
use rtbench::report::{AccuracyResult, ParsedRun, SubmissionBundle};
use rtbench::sut::{Category, LatencyModel, SimulatedSut, SimulatedSutConfig, SutDescriptor};

pub fn latency_models() -> Vec<(&'static str, LatencyModel)> {
    vec![
        ("fixed", LatencyModel::Fixed(7_000_000)),
        (
            "uniform",
            LatencyModel::Uniform {
                lo_ns: 2_000_000,
                hi_ns: 90_000_000,
            },
        ),
        (
            "lognormal",
            LatencyModel::LogNormal {
                mu: (20e6f64).ln(),
                sigma: 0.6,
            },
        ),
        (
            "bimodal",
            LatencyModel::Bimodal {
                fast_ns: 5_000_000,
                slow_ns: 120_000_000,
                fast_weight: 0.9,
            },
        ),
    ]
}

/// Simulated runs over every profile, scenario and latency model, two seeds
/// each.
pub fn run_matrix(queries: u64) -> Vec<(String, RunLog)> {
    let mut out = Vec::new();
    for profile in builtin_profiles() {
        for scenario in [Scenario::SingleStream, Scenario::ConstantStream] {
            for (name, model) in latency_models() {
                for seed in [1u64, 2] {
                    let settings = RunSettings {
                        scenario,
                        seed,
                        ..short_settings(queries)
                    };
                    let cfg = SimulatedSutConfig::new(model.clone()).with_seed(seed);
                    let mut sut = SimulatedSut::new(name, cfg).unwrap();
                    let log = Engine::simulated().run(&mut sut, &settings, &profile).unwrap();
                    out.push((format!("{}/{scenario}/{name}/{seed}", profile.name), log));
                }
            }
        }
    }
    out
}

/// A bundle built from real simulated runs: performance run, compliance
/// suite and the given accuracy value.
pub fn make_bundle(profile: &str, scenario: Scenario, accuracy: f64, category: Category) -> SubmissionBundle {
    let profile = find_profile(profile).unwrap();
    let settings = RunSettings {
        scenario,
        ..short_settings(300)
    };
    let cfg = SimulatedSutConfig::fixed_ns(4_000_000).with_echo();
    let mut sut = SimulatedSut::new("sim", cfg).unwrap();
    let mut engine = Engine::simulated();
    let run = engine.run(&mut sut, &settings, &profile).unwrap();
    let opts = SuiteOptions {
        caching_queries: 100,
        determinism_queries: 16,
        ..SuiteOptions::default()
    };
    let verdicts = run_suite(&mut engine, &mut sut, &settings, &profile, &ComplianceTest::ALL, &opts).unwrap();
    let summary = run.summary().ok();
    SubmissionBundle {
        performance: ParsedRun {
            run,
            summary,
            verdicts: Vec::new(),
        },
        accuracy: AccuracyResult {
            metric: "mAP".into(),
            value: accuracy,
            reference: Some(0.5),
            profile: Some(profile.name.clone()),
        },
        system: SutDescriptor::new("desk-box", category),
        verdicts,
    }
}
