mod common;

use proptest::prelude::*;
use rtbench::metrics::{average_precision, mean_ap, miou, Frame, SegmentationMask};

use common::{brute_force_ap, brute_force_map, exhaustive_instances, grid_box};

#[test]
fn ap_matches_brute_force_exhaustively() {
    let instances = exhaustive_instances();
    assert!(instances.len() > 10_000);
    for f in &instances {
        let got = average_precision(&f.predictions, &f.ground_truth, 0.5);
        let want = brute_force_ap(std::slice::from_ref(f), 0, 0.5);
        assert!((got - want).abs() <= 1e-12, "{f:?}: {got} vs {want}");
    }
}

fn frames_strategy() -> impl Strategy<Value = Vec<Frame>> {
    // (frame, class, grid code, is_prediction, score level)
    prop::collection::vec((0usize..2, 0u32..2, 0u8..4, any::<bool>(), 0u8..3), 0..=6).prop_map(|items| {
        let mut frames = vec![Frame::default(), Frame::default()];
        for (fi, class, code, is_pred, level) in items {
            let b = grid_box(code).with_class(class);
            if is_pred {
                let score = [0.2, 0.5, 0.8][level as usize];
                frames[fi].predictions.push(b.with_score(score).unwrap());
            } else {
                frames[fi].ground_truth.push(b);
            }
        }
        frames
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn mean_ap_matches_brute_force(frames in frames_strategy(), thr in prop::sample::select(vec![0.3, 0.5, 0.7])) {
        match brute_force_map(&frames, thr) {
            None => prop_assert!(mean_ap(&frames, thr).is_err()),
            Some(want) => {
                let got = mean_ap(&frames, thr).unwrap();
                prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
            }
        }
    }

    #[test]
    fn miou_matches_set_definition(w in 1usize..5, h in 1usize..5, k in 1u32..4,
                                   seed in any::<u64>()) {
        let mut rng = rtbench::rng::SplitMix64::new(seed);
        let mut draw = || (0..w * h).map(|_| (rng.next() % k as u64) as u32).collect::<Vec<_>>();
        let truth = draw();
        let pred = draw();
        let mut ious = Vec::new();
        for c in 0..k {
            if !truth.contains(&c) {
                continue;
            }
            let inter = truth.iter().zip(&pred).filter(|(t, p)| **t == c && **p == c).count();
            let union = truth.iter().zip(&pred).filter(|(t, p)| **t == c || **p == c).count();
            ious.push(inter as f64 / union as f64);
        }
        let want = ious.iter().sum::<f64>() / ious.len() as f64;
        let got = miou(
            &SegmentationMask::new(w, h, pred).unwrap(),
            &SegmentationMask::new(w, h, truth).unwrap(),
            k,
        ).unwrap();
        prop_assert!((got - want).abs() <= 1e-12);
    }
}
