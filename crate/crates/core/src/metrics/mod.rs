//! Evaluation metrics: pixel MAE, IoU, pixel F1, per-image confusion
//! categorization, detection F1, and error histograms.

pub mod report;

pub use report::{evaluate_dataset, EvalConfig, EvalReport, PerImageRow};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-image confusion category per the near-miss rule: a nonempty ground
/// truth whose prediction differs in fewer than `tp_diff_threshold` pixels
/// counts as a true positive regardless of overlap quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfusionCategory {
    TP,
    TN,
    FP,
    FN,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, c: ConfusionCategory) {
        match c {
            ConfusionCategory::TP => self.tp += 1,
            ConfusionCategory::TN => self.tn += 1,
            ConfusionCategory::FP => self.fp += 1,
            ConfusionCategory::FN => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_shape<A, B>(gt: &Array2<A>, pred: &Array2<B>) -> Result<()> {
    if gt.dim() != pred.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", gt.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    Ok(())
}

/// Mean absolute per-pixel error; accepts probability or binary predictions.
pub fn pixel_mae(gt: &Array2<u8>, pred: &Array2<f32>) -> Result<f64> {
    check_shape(gt, pred)?;
    let total: f64 = gt
        .iter()
        .zip(pred.iter())
        .map(|(&y, &p)| (y as f64 - p as f64).abs())
        .sum();
    Ok(total / gt.len() as f64)
}

/// Intersection over union of two binary masks; both-empty is defined as 1.
pub fn iou(gt: &Array2<u8>, pred: &Array2<u8>) -> Result<f64> {
    check_shape(gt, pred)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in gt.iter().zip(pred.iter()) {
        inter += usize::from(a == 1 && b == 1);
        union += usize::from(a == 1 || b == 1);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Dice-style per-image F1: `2|gt∧pred| / (|gt| + |pred|)`; both-empty is 1.
pub fn pixel_f1(gt: &Array2<u8>, pred: &Array2<u8>) -> Result<f64> {
    check_shape(gt, pred)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&a, &b) in gt.iter().zip(pred.iter()) {
        inter += usize::from(a == 1 && b == 1);
        total += usize::from(a == 1) + usize::from(b == 1);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Per-image confusion categorization.
///
/// - both masks empty → TN
/// - ground truth empty, prediction nonempty → FP
/// - ground truth nonempty, symmetric difference below `tp_diff_threshold`
///   pixels → TP
/// - ground truth nonempty with zero overlap → FN
/// - otherwise TP if IoU ≥ `iou_threshold`, else FN
pub fn categorize(
    gt: &Array2<u8>,
    pred: &Array2<u8>,
    tp_diff_threshold: usize,
    iou_threshold: f64,
) -> Result<ConfusionCategory> {
    check_shape(gt, pred)?;
    let gt_count = gt.iter().filter(|&&v| v == 1).count();
    let pred_count = pred.iter().filter(|&&v| v == 1).count();
    if gt_count == 0 {
        return Ok(if pred_count == 0 {
            ConfusionCategory::TN
        } else {
            ConfusionCategory::FP
        });
    }
    let xor = gt
        .iter()
        .zip(pred.iter())
        .filter(|(&a, &b)| a != b)
        .count();
    if xor < tp_diff_threshold {
        return Ok(ConfusionCategory::TP);
    }
    let inter = gt
        .iter()
        .zip(pred.iter())
        .filter(|(&a, &b)| a == 1 && b == 1)
        .count();
    if inter == 0 {
        return Ok(ConfusionCategory::FN);
    }
    if iou(gt, pred)? >= iou_threshold {
        Ok(ConfusionCategory::TP)
    } else {
        Ok(ConfusionCategory::FN)
    }
}

/// Detection F1 over per-image confusion counts: `2TP / (2TP + FP + FN)`.
pub fn detection_f1(counts: &ConfusionCounts) -> f64 {
    let denom = 2 * counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        return 0.0;
    }
    2.0 * counts.tp as f64 / denom as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bucket_width: f64,
    /// `buckets[k]` counts images with error in `[k·width, (k+1)·width)`.
    pub buckets: Vec<usize>,
    pub outlier_threshold: f64,
    /// Images with error percentage strictly above the threshold.
    pub outliers: usize,
}

/// Bucket per-image error percentages (0..100) into fixed-width bins and
/// count outliers above `outlier_threshold` percent.
pub fn error_histogram(
    error_pcts: &[f64],
    bucket_width: f64,
    outlier_threshold: f64,
) -> Result<ErrorHistogram> {
    if bucket_width <= 0.0 {
        return Err(Error::config(format!(
            "bucket width must be positive, got {bucket_width}"
        )));
    }
    for &e in error_pcts {
        if !(0.0..=100.0).contains(&e) {
            return Err(Error::data(format!("error percentage {e} outside [0,100]")));
        }
    }
    let n_buckets = (100.0 / bucket_width).ceil() as usize + 1;
    let mut buckets = vec![0usize; n_buckets];
    let mut outliers = 0usize;
    for &e in error_pcts {
        let idx = ((e / bucket_width).floor() as usize).min(n_buckets - 1);
        buckets[idx] += 1;
        if e > outlier_threshold {
            outliers += 1;
        }
    }
    while buckets.len() > 1 && *buckets.last().unwrap() == 0 {
        buckets.pop();
    }
    Ok(ErrorHistogram {
        bucket_width,
        buckets,
        outlier_threshold,
        outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(size: usize, x0: usize, y0: usize, w: usize, h: usize) -> Array2<u8> {
        let mut m = Array2::zeros((size, size));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m[(y, x)] = 1;
            }
        }
        m
    }

    #[test]
    fn mae_extremes() {
        let a = block(4, 0, 0, 2, 2);
        let af = a.mapv(|v| v as f32);
        assert_eq!(pixel_mae(&a, &af).unwrap(), 0.0);
        let complement = a.mapv(|v| 1.0 - v as f32);
        assert_eq!(pixel_mae(&a, &complement).unwrap(), 1.0);
    }

    #[test]
    fn mae_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..2u8));
        let pred = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0.0f32..1.0));
        let mut oracle = 0.0f64;
        for (y, p) in gt.iter().zip(pred.iter()) {
            oracle += (*y as f64 - *p as f64).abs();
        }
        oracle /= 256.0;
        assert!((pixel_mae(&gt, &pred).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn iou_known_overlap() {
        // 2x2 blocks sharing a 1x2 edge: intersection 2, union 6
        let gt = block(6, 1, 1, 2, 2);
        let pred = block(6, 2, 1, 2, 2);
        assert!((iou(&gt, &pred).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert!((pixel_f1(&gt, &pred).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint_masks() {
        let a = block(6, 0, 0, 2, 2);
        let b = block(6, 4, 4, 2, 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(pixel_f1(&a, &a).unwrap(), 1.0);
        assert_eq!(pixel_f1(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn both_empty_scores_one() {
        let z = Array2::<u8>::zeros((4, 4));
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
        assert_eq!(pixel_f1(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn categorize_rules() {
        let z = Array2::<u8>::zeros((16, 16));
        let gt = block(16, 2, 2, 8, 8);
        assert_eq!(categorize(&z, &z, 100, 0.4).unwrap(), ConfusionCategory::TN);
        assert_eq!(
            categorize(&z, &block(16, 0, 0, 2, 2), 100, 0.4).unwrap(),
            ConfusionCategory::FP
        );
        // 50-pixel difference stays TP under the <100 rule
        let mut near = gt.clone();
        let mut flipped = 0;
        'outer: for y in 0..16 {
            for x in 0..16 {
                if near[(y, x)] == 1 {
                    near[(y, x)] = 0;
                    flipped += 1;
                    if flipped == 50 {
                        break 'outer;
                    }
                }
            }
        }
        assert_eq!(categorize(&gt, &near, 100, 0.4).unwrap(), ConfusionCategory::TP);
        // a ground truth large enough that the near-miss rule cannot fire
        let gt_large = block(16, 0, 0, 12, 12);
        // empty prediction on a nonempty ground truth
        assert_eq!(categorize(&gt_large, &z, 100, 0.4).unwrap(), ConfusionCategory::FN);
        // disjoint prediction
        assert_eq!(
            categorize(&gt_large, &block(16, 13, 13, 2, 2), 100, 0.4).unwrap(),
            ConfusionCategory::FN
        );
    }

    #[test]
    fn categorize_is_total_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let gt = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0..2u8));
            let pred = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0..2u8));
            categorize(&gt, &pred, 10, 0.4).unwrap();
        }
    }

    #[test]
    fn detection_f1_values() {
        let mut c = ConfusionCounts::default();
        c.tp = 10;
        assert_eq!(detection_f1(&c), 1.0);
        let c0 = ConfusionCounts { tp: 0, fp: 2, fn_: 1, tn: 5 };
        assert_eq!(detection_f1(&c0), 0.0);
        let c2 = ConfusionCounts { tp: 3, fp: 1, fn_: 2, tn: 0 };
        assert!((detection_f1(&c2) - 6.0 / 9.0).abs() < 1e-12);
        assert_eq!(detection_f1(&ConfusionCounts::default()), 0.0);
    }

    #[test]
    fn histogram_buckets_partition() {
        let errs = vec![0.0, 0.5, 1.2, 5.0, 3.9, 0.1];
        let h = error_histogram(&errs, 1.0, 4.0).unwrap();
        assert_eq!(h.buckets.iter().sum::<usize>(), errs.len());
        assert_eq!(h.outliers, 1);
    }

    #[test]
    fn all_zero_errors_single_bucket() {
        let h = error_histogram(&[0.0; 5], 0.5, 4.0).unwrap();
        assert_eq!(h.buckets[0], 5);
        assert_eq!(h.buckets.iter().sum::<usize>(), 5);
        assert_eq!(h.outliers, 0);
    }

    #[test]
    fn negative_bucket_width_rejected() {
        assert!(error_histogram(&[1.0], -1.0, 4.0).is_err());
    }

    proptest::proptest! {
        /// IoU ≤ pixel F1 for every mask pair.
        #[test]
        fn iou_never_exceeds_f1(
            gt in proptest::collection::vec(0u8..2, 64),
            pred in proptest::collection::vec(0u8..2, 64),
        ) {
            let gt = Array2::from_shape_vec((8, 8), gt).unwrap();
            let pred = Array2::from_shape_vec((8, 8), pred).unwrap();
            let i = iou(&gt, &pred).unwrap();
            let f = pixel_f1(&gt, &pred).unwrap();
            proptest::prop_assert!(i <= f + 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&i));
            proptest::prop_assert!((0.0..=1.0).contains(&f));
        }

        /// Binary MAE equals |XOR| / total.
        #[test]
        fn binary_mae_equals_xor_fraction(
            gt in proptest::collection::vec(0u8..2, 64),
            pred in proptest::collection::vec(0u8..2, 64),
        ) {
            let gt = Array2::from_shape_vec((8, 8), gt).unwrap();
            let predf = Array2::from_shape_vec((8, 8), pred.clone()).unwrap().mapv(|v| v as f32);
            let xor = gt.iter().zip(pred.iter()).filter(|(&a, &b)| a != b).count();
            let mae = pixel_mae(&gt, &predf).unwrap();
            proptest::prop_assert!((mae - xor as f64 / 64.0).abs() < 1e-12);
        }
    }
}
