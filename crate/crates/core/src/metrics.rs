//! Accuracy metrics: single-threshold detection mAP, segmentation mIoU, and
//! the gate against an FP32 reference.
//!
//! mAP uses one IoU threshold (0.5 by default) and all-points interpolation:
//! predictions are matched greedily in descending score order (ties keep input
//! order), each ground truth at most once, and AP is the area under the
//! precision envelope.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("no ground-truth instances")]
    NoGroundTruth,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("mask has {got} pixels, expected {expected}")]
    MaskSize { expected: usize, got: usize },
    #[error("class id {id} is not below num_classes {num_classes}")]
    ClassOutOfRange { id: u32, num_classes: u32 },
    #[error("reference accuracy must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("accuracy constraint {0} is outside (0, 1]")]
    ConstraintOutOfRange(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    /// Confidence for predictions; ground truths carry 1.0.
    pub score: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, MetricsError> {
        if !(x1 < x2 && y1 < y2) || ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(MetricsError::InvalidBox(format!(
                "({x1}, {y1}, {x2}, {y2}) has no positive area"
            )));
        }
        Ok(Self {
            x1,
            y1,
            x2,
            y2,
            class_id: 0,
            score: 1.0,
        })
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn with_score(mut self, score: f64) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(MetricsError::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        self.score = score;
        Ok(self)
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub predictions: Vec<BBox>,
    pub ground_truth: Vec<BBox>,
}

/// Area under the all-points-interpolated precision/recall curve.
/// `recall` must be non-decreasing.
fn envelope_area(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mrec.push(0.0);
    mpre.push(0.0);
    mrec.extend_from_slice(recall);
    mpre.extend_from_slice(precision);
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (0..mrec.len() - 1)
        .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
        .sum()
}

/// AP for one class pooled over frames.
fn class_ap(frames: &[Frame], class_id: u32, iou_threshold: f64) -> f64 {
    let n_gt: usize = frames
        .iter()
        .map(|f| f.ground_truth.iter().filter(|g| g.class_id == class_id).count())
        .sum();
    let mut preds: Vec<(usize, &BBox)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| {
            f.predictions
                .iter()
                .filter(|p| p.class_id == class_id)
                .map(move |p| (fi, p))
        })
        .collect();
    if n_gt == 0 {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    // stable: equal scores keep input order
    preds.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = frames
        .iter()
        .map(|f| vec![false; f.ground_truth.len()])
        .collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(preds.len());
    let mut precision = Vec::with_capacity(preds.len());
    for (fi, pred) in preds {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in frames[fi].ground_truth.iter().enumerate() {
            if gt.class_id != class_id || matched[fi][gi] {
                continue;
            }
            let overlap = iou(pred, gt);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[fi][gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    envelope_area(&recall, &precision)
}

/// Single-class, single-frame AP. Class ids are ignored.
///
/// No predictions gives 0.0; no ground truth and no predictions gives 1.0.
pub fn average_precision(predictions: &[BBox], ground_truths: &[BBox], iou_threshold: f64) -> f64 {
    let frame = Frame {
        predictions: predictions.iter().map(|b| b.with_class(0)).collect(),
        ground_truth: ground_truths.iter().map(|b| b.with_class(0)).collect(),
    };
    class_ap(std::slice::from_ref(&frame), 0, iou_threshold)
}

/// Per-class AP for every class with at least one ground-truth instance.
pub fn per_class_ap(frames: &[Frame], iou_threshold: f64) -> BTreeMap<u32, f64> {
    let classes: BTreeSet<u32> = frames
        .iter()
        .flat_map(|f| f.ground_truth.iter().map(|g| g.class_id))
        .collect();
    classes
        .into_iter()
        .map(|c| (c, class_ap(frames, c, iou_threshold)))
        .collect()
}

/// Unweighted mean of per-class AP over classes present in ground truth.
/// Predictions of classes absent from ground truth are ignored.
pub fn mean_ap(frames: &[Frame], iou_threshold: f64) -> Result<f64, MetricsError> {
    let aps = per_class_ap(frames, iou_threshold);
    if aps.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(aps.values().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    /// Row-major class ids.
    pub classes: Vec<u32>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, classes: Vec<u32>) -> Result<Self, MetricsError> {
        if classes.len() != width * height {
            return Err(MetricsError::MaskSize {
                expected: width * height,
                got: classes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }
}

/// Confusion matrix indexed `[truth][predicted]`, accumulated over mask pairs.
pub fn confusion_matrix(
    pairs: &[(&SegmentationMask, &SegmentationMask)],
    num_classes: u32,
) -> Result<Vec<Vec<u64>>, MetricsError> {
    let k = num_classes as usize;
    let mut m = vec![vec![0u64; k]; k];
    for (pred, truth) in pairs {
        if (pred.width, pred.height) != (truth.width, truth.height) {
            return Err(MetricsError::DimensionMismatch(
                pred.width,
                pred.height,
                truth.width,
                truth.height,
            ));
        }
        for (&p, &t) in pred.classes.iter().zip(&truth.classes) {
            for id in [p, t] {
                if id >= num_classes {
                    return Err(MetricsError::ClassOutOfRange { id, num_classes });
                }
            }
            m[t as usize][p as usize] += 1;
        }
    }
    Ok(m)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num/den` fractions, summed exactly while the rational fits in
/// u128 so simple cases land on the nearest double.
fn mean_of_fractions(fracs: &[(u64, u64)]) -> f64 {
    let exact = fracs.iter().try_fold((0u128, 1u128), |(n, d), &(fn_, fd)| {
        let (fn_, fd) = (fn_ as u128, fd as u128);
        let num = n.checked_mul(fd)?.checked_add(fn_.checked_mul(d)?)?;
        let den = d.checked_mul(fd)?;
        let g = gcd(num, den).max(1);
        let (num, den) = (num / g, den / g);
        Some((num, den))
    });
    let count = fracs.len() as u128;
    if let Some((n, d)) = exact {
        if let Some(d) = d.checked_mul(count) {
            let g = gcd(n, d).max(1);
            return (n / g) as f64 / (d / g) as f64;
        }
    }
    fracs.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / fracs.len() as f64
}

/// Mean IoU over classes present in the ground truth.
pub fn miou(
    predicted: &SegmentationMask,
    truth: &SegmentationMask,
    num_classes: u32,
) -> Result<f64, MetricsError> {
    miou_many(&[(predicted, truth)], num_classes)
}

/// Dataset-level mIoU from one confusion matrix over all mask pairs.
pub fn miou_many(
    pairs: &[(&SegmentationMask, &SegmentationMask)],
    num_classes: u32,
) -> Result<f64, MetricsError> {
    let m = confusion_matrix(pairs, num_classes)?;
    let k = num_classes as usize;
    let fracs: Vec<(u64, u64)> = (0..k)
        .filter_map(|c| {
            let row: u64 = m[c].iter().sum();
            if row == 0 {
                return None;
            }
            let col: u64 = (0..k).map(|r| m[r][c]).sum();
            let diag = m[c][c];
            Some((diag, row + col - diag))
        })
        .collect();
    if fracs.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(mean_of_fractions(&fracs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateResult {
    pub measured: f64,
    pub reference: f64,
    pub constraint: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Passes when `measured >= reference * constraint`; ties pass.
pub fn accuracy_gate(measured: f64, reference: f64, constraint: f64) -> Result<GateResult, MetricsError> {
    if !(reference.is_finite() && reference > 0.0) {
        return Err(MetricsError::NonPositiveReference(reference));
    }
    if !(constraint > 0.0 && constraint <= 1.0) {
        return Err(MetricsError::ConstraintOutOfRange(constraint));
    }
    let threshold = reference * constraint;
    Ok(GateResult {
        measured,
        reference,
        constraint,
        threshold,
        passed: measured >= threshold,
    })
}

/// Parses detection records, one per line:
///
/// `frame_id,kind,class_id,x1,y1,x2,y2,score`
///
/// `kind` is `gt` or `pred`; `score` is required for `pred` and must be empty
/// or absent for `gt`. Blank lines and `#` comments are skipped. Frames come
/// back ordered by id.
pub fn parse_detections(text: &str) -> Result<Vec<Frame>, MetricsError> {
    let mut frames: BTreeMap<u64, Frame> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| MetricsError::Parse {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(f.len() == 7 || f.len() == 8) {
            return Err(err(format!("expected 7 or 8 fields, got {}", f.len())));
        }
        let frame_id: u64 = f[0].parse().map_err(|_| err(format!("bad frame id `{}`", f[0])))?;
        let class_id: u32 = f[2].parse().map_err(|_| err(format!("bad class id `{}`", f[2])))?;
        let mut coords = [0.0f64; 4];
        for (c, s) in coords.iter_mut().zip(&f[3..7]) {
            *c = s.parse().map_err(|_| err(format!("bad coordinate `{s}`")))?;
        }
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3])
            .map_err(|e| err(e.to_string()))?
            .with_class(class_id);
        let score = f.get(7).copied().unwrap_or("");
        let frame = frames.entry(frame_id).or_default();
        match f[1] {
            "gt" if score.is_empty() => frame.ground_truth.push(bbox),
            "gt" => return Err(err("ground truth carries a score".into())),
            "pred" => {
                let s: f64 = score.parse().map_err(|_| err(format!("bad score `{score}`")))?;
                frame
                    .predictions
                    .push(bbox.with_score(s).map_err(|e| err(e.to_string()))?);
            }
            other => return Err(err(format!("kind must be gt or pred, got `{other}`"))),
        }
    }
    Ok(frames.into_values().collect())
}

/// Parses masks, one per line: `mask_id,width,height,c0,c1,...` with
/// `width * height` row-major class ids. Masks come back ordered by id.
pub fn parse_masks(text: &str) -> Result<BTreeMap<u64, SegmentationMask>, MetricsError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| MetricsError::Parse {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 3 {
            return Err(err("expected mask_id,width,height,ids...".into()));
        }
        let id: u64 = f[0].parse().map_err(|_| err(format!("bad mask id `{}`", f[0])))?;
        let w: usize = f[1].parse().map_err(|_| err(format!("bad width `{}`", f[1])))?;
        let h: usize = f[2].parse().map_err(|_| err(format!("bad height `{}`", f[2])))?;
        let classes = f[3..]
            .iter()
            .map(|s| s.parse::<u32>().map_err(|_| err(format!("bad class id `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mask = SegmentationMask::new(w, h, classes).map_err(|e| err(e.to_string()))?;
        if out.insert(id, mask).is_some() {
            return Err(err(format!("duplicate mask id {id}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &b(2.0, 0.0, 3.0, 2.0)), 0.0);
        assert_eq!(iou(&a, &b(1.0, 1.0, 3.0, 3.0)), 1.0 / 7.0);
    }

    #[test]
    fn invalid_boxes() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
        assert!(b(0.0, 0.0, 1.0, 1.0).with_score(1.5).is_err());
    }

    #[test]
    fn ap_two_predictions() {
        let gt = [b(0.0, 0.0, 10.0, 10.0)];
        let hit = b(0.0, 0.0, 10.0, 10.0);
        let miss = b(50.0, 50.0, 60.0, 60.0);
        let first = [hit.with_score(0.9).unwrap(), miss.with_score(0.8).unwrap()];
        assert_eq!(average_precision(&first, &gt, 0.5), 1.0);
        let swapped = [hit.with_score(0.8).unwrap(), miss.with_score(0.9).unwrap()];
        assert_eq!(average_precision(&swapped, &gt, 0.5), 0.5);
    }

    #[test]
    fn ap_conventions() {
        let gt = [b(0.0, 0.0, 1.0, 1.0)];
        assert_eq!(average_precision(&[], &gt, 0.5), 0.0);
        assert_eq!(average_precision(&[], &[], 0.5), 1.0);
        assert_eq!(average_precision(&[gt[0]], &[], 0.5), 0.0);
    }

    #[test]
    fn ap_each_gt_matched_once() {
        let gt = [b(0.0, 0.0, 10.0, 10.0)];
        let p = b(0.0, 0.0, 10.0, 10.0);
        // duplicate detection is a false positive
        let preds = [p.with_score(0.9).unwrap(), p.with_score(0.8).unwrap()];
        assert_eq!(average_precision(&preds, &gt, 0.5), 1.0);
        let gts = [b(0.0, 0.0, 10.0, 10.0), b(20.0, 20.0, 30.0, 30.0)];
        let preds = [p.with_score(0.9).unwrap(), p.with_score(0.8).unwrap()];
        assert_eq!(average_precision(&preds, &gts, 0.5), 0.5);
    }

    #[test]
    fn mean_ap_cases() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let far = b(50.0, 50.0, 60.0, 60.0);
        let frame = Frame {
            ground_truth: vec![g.with_class(0), g.with_class(1)],
            predictions: vec![
                g.with_class(0).with_score(0.9).unwrap(),
                far.with_class(1).with_score(0.9).unwrap(),
                g.with_class(1).with_score(0.8).unwrap(),
                // class 7 has no ground truth: ignored
                g.with_class(7).with_score(0.99).unwrap(),
            ],
        };
        let aps = per_class_ap(std::slice::from_ref(&frame), 0.5);
        assert_eq!(aps.len(), 2);
        assert_eq!(aps[&0], 1.0);
        assert_eq!(aps[&1], 0.5);
        assert_eq!(mean_ap(&[frame], 0.5).unwrap(), 0.75);
        assert_eq!(mean_ap(&[Frame::default()], 0.5), Err(MetricsError::NoGroundTruth));
    }

    #[test]
    fn miou_cases() {
        let truth = SegmentationMask::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let pred = SegmentationMask::new(2, 2, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(miou(&pred, &truth, 2).unwrap(), 7.0 / 12.0);
        assert_eq!(miou(&truth, &truth, 2).unwrap(), 1.0);
        let all_zero = SegmentationMask::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(miou(&all_zero, &truth, 2).unwrap(), 0.25);
    }

    #[test]
    fn miou_errors() {
        let a = SegmentationMask::new(2, 1, vec![0, 1]).unwrap();
        let b = SegmentationMask::new(1, 2, vec![0, 1]).unwrap();
        assert!(matches!(miou(&a, &b, 2), Err(MetricsError::DimensionMismatch(..))));
        assert!(matches!(
            miou(&a, &a, 1),
            Err(MetricsError::ClassOutOfRange { id: 1, .. })
        ));
        assert!(SegmentationMask::new(2, 2, vec![0]).is_err());
    }

    #[test]
    fn gate_vectors() {
        assert!(accuracy_gate(0.7141, 0.7141, 0.999).unwrap().passed);
        let g = accuracy_gate(0.6943, 0.7141, 0.999).unwrap();
        assert!(!g.passed);
        assert!((g.threshold - 0.7133859).abs() < 1e-9);
        for r in [0.1, 0.7141, 3.0, 1e6] {
            assert!(accuracy_gate(0.99 * r, r, 0.99).unwrap().passed);
        }
        assert!(accuracy_gate(0.5, 0.0, 0.99).is_err());
        assert!(accuracy_gate(0.5, 1.0, 1.5).is_err());
    }

    #[test]
    fn parse_interchange() {
        let text = "# frame,kind,class,x1,y1,x2,y2,score\n\
                    1,gt,0,0,0,10,10\n\
                    1,pred,0,0,0,10,10,0.9\n\
                    0,gt,2,0,0,1,1,\n";
        let frames = parse_detections(text).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].ground_truth[0].class_id, 2);
        assert_eq!(frames[1].predictions[0].score, 0.9);

        assert!(matches!(
            parse_detections("1,gt,0,0,0,10\n"),
            Err(MetricsError::Parse { line: 1, .. })
        ));
        assert!(parse_detections("1,pred,0,0,0,10,10\n").is_err());
        assert!(parse_detections("1,box,0,0,0,10,10,0.5\n").is_err());

        let masks = parse_masks("3,2,1,0,1\n1,1,1,4\n").unwrap();
        assert_eq!(masks.keys().copied().collect::<Vec<_>>(), vec![1, 3]);
        assert!(parse_masks("1,2,2,0,1,1\n").is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric(ax in 0.0f64..10.0, ay in 0.0f64..10.0, aw in 0.1f64..10.0, ah in 0.1f64..10.0,
                         bx in 0.0f64..10.0, by in 0.0f64..10.0, bw in 0.1f64..10.0, bh in 0.1f64..10.0) {
            let a = b(ax, ay, ax + aw, ay + ah);
            let c = b(bx, by, bx + bw, by + bh);
            prop_assert_eq!(iou(&a, &c), iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&iou(&a, &c)));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn gate_scale_invariant(m in 0.01f64..1.0, r in 0.01f64..1.0, c in 0.5f64..=1.0, k in -20i32..20) {
            let alpha = 2f64.powi(k);
            prop_assert_eq!(
                accuracy_gate(alpha * m, alpha * r, c).unwrap().passed,
                accuracy_gate(m, r, c).unwrap().passed
            );
        }

        #[test]
        fn miou_identity(w in 1usize..6, h in 1usize..6, k in 1u32..5, seed in any::<u64>()) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let ids = (0..w * h).map(|_| (rng.next() % k as u64) as u32).collect();
            let m = SegmentationMask::new(w, h, ids).unwrap();
            prop_assert_eq!(miou(&m, &m, k).unwrap(), 1.0);
        }
    }
}
