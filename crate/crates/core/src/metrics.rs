//! Accuracy scoring of classification maps against ground truth:
//! confusion matrix, overall accuracy, average (per-class) accuracy,
//! and Cohen's kappa, with a pixel mask for holding annotated pixels
//! out of the score (typically the training and validation splits).

use alloc::vec;
use alloc::vec::Vec;

use crate::infer::ClassificationMap;
use crate::scene::GroundTruth;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("map covers {map_h}x{map_w} but ground truth covers {gt_h}x{gt_w}")]
    ExtentMismatch {
        map_h: usize,
        map_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("mask covers {mask_h}x{mask_w} but the scene covers {h}x{w}")]
    MaskShapeMismatch {
        mask_h: usize,
        mask_w: usize,
        h: usize,
        w: usize,
    },
    #[error("map scores {map} classes but ground truth has {gt}")]
    ClassCountMismatch { map: usize, gt: usize },
    #[error("pixel ({row}, {col}) is included in the evaluation but was never predicted")]
    UnpredictedPixel { row: usize, col: usize },
    #[error("pixel ({row}, {col}) carries label {label}, outside 1..={num_classes}")]
    LabelOutOfRange {
        row: usize,
        col: usize,
        label: u16,
        num_classes: usize,
    },
    #[error("no pixels left to evaluate after exclusions")]
    NoPixels,
    #[error("confusion matrix of {len} entries is not {classes}x{classes}")]
    BadConfusion { len: usize, classes: usize },
}

/// A set of pixels over a raster, used to exclude pixels from scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.width + col] = true;
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn union(&self, other: &PixelMask) -> Result<PixelMask, MetricsError> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(MetricsError::MaskShapeMismatch {
                mask_h: other.height,
                mask_w: other.width,
                h: self.height,
                w: self.width,
            });
        }
        let mut out = self.clone();
        for (o, b) in out.bits.iter_mut().zip(&other.bits) {
            *o |= *b;
        }
        Ok(out)
    }

    /// Marks the listed `(row, col)` pixels.
    pub fn from_pixels(
        height: usize,
        width: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut mask = Self::new(height, width);
        for (row, col) in pixels {
            mask.set(row, col);
        }
        mask
    }
}

/// Scores derived from a confusion matrix. `confusion` is row-major
/// with the true class on rows: `confusion[actual * C + predicted]`,
/// classes indexed 0..C for ids 1..=C.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub confusion: Vec<u64>,
    /// Fraction of each class's pixels that were labeled correctly.
    /// Classes with no pixels score NaN and are left out of the average.
    pub per_class_recall: Vec<f64>,
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    pub pixels_evaluated: u64,
}

impl MetricsReport {
    /// Computes all scores from a `C x C` confusion matrix.
    pub fn from_confusion(confusion: &[u64], num_classes: usize) -> Result<Self, MetricsError> {
        if confusion.len() != num_classes * num_classes {
            return Err(MetricsError::BadConfusion {
                len: confusion.len(),
                classes: num_classes,
            });
        }
        let total: u64 = confusion.iter().sum();
        if total == 0 {
            return Err(MetricsError::NoPixels);
        }
        let n = total as f64;
        let mut trace = 0u64;
        let mut per_class = vec![f64::NAN; num_classes];
        let mut expected = 0.0f64;
        for i in 0..num_classes {
            let row: u64 = confusion[i * num_classes..(i + 1) * num_classes].iter().sum();
            let col: u64 = (0..num_classes).map(|j| confusion[j * num_classes + i]).sum();
            let diag = confusion[i * num_classes + i];
            trace += diag;
            if row > 0 {
                per_class[i] = diag as f64 / row as f64;
            }
            expected += (row as f64 / n) * (col as f64 / n);
        }
        let observed = trace as f64 / n;
        let present: Vec<f64> = per_class.iter().copied().filter(|v| !v.is_nan()).collect();
        let average = present.iter().sum::<f64>() / present.len() as f64;
        // Chance agreement of 1 means both sides use a single class;
        // agreement is then either perfect or absent.
        let kappa = if (1.0 - expected).abs() < 1e-12 {
            if (observed - 1.0).abs() < 1e-12 {
                1.0
            } else {
                0.0
            }
        } else {
            (observed - expected) / (1.0 - expected)
        };
        Ok(Self {
            num_classes,
            confusion: confusion.to_vec(),
            per_class_recall: per_class,
            overall_accuracy: observed,
            average_accuracy: average,
            kappa,
            pixels_evaluated: total,
        })
    }
}

/// Scores a map against ground truth. A pixel counts when it carries a
/// label, is not excluded, and was predicted; a labeled, non-excluded
/// pixel without a prediction is an error rather than a silent skip.
pub fn evaluate_map(
    map: &ClassificationMap,
    gt: &GroundTruth,
    exclude: Option<&PixelMask>,
) -> Result<MetricsReport, MetricsError> {
    if (map.height, map.width) != (gt.height, gt.width) {
        return Err(MetricsError::ExtentMismatch {
            map_h: map.height,
            map_w: map.width,
            gt_h: gt.height,
            gt_w: gt.width,
        });
    }
    if map.num_classes != gt.num_classes {
        return Err(MetricsError::ClassCountMismatch {
            map: map.num_classes,
            gt: gt.num_classes,
        });
    }
    if let Some(mask) = exclude {
        if (mask.height, mask.width) != (gt.height, gt.width) {
            return Err(MetricsError::MaskShapeMismatch {
                mask_h: mask.height,
                mask_w: mask.width,
                h: gt.height,
                w: gt.width,
            });
        }
    }
    let c = gt.num_classes;
    let mut confusion = vec![0u64; c * c];
    for row in 0..gt.height {
        for col in 0..gt.width {
            let actual = gt.labels[row * gt.width + col];
            if actual == 0 {
                continue;
            }
            if exclude.is_some_and(|m| m.contains(row, col)) {
                continue;
            }
            let predicted = map.class_at(row, col);
            if predicted == 0 {
                return Err(MetricsError::UnpredictedPixel { row, col });
            }
            for label in [actual, predicted] {
                if label as usize > c {
                    return Err(MetricsError::LabelOutOfRange {
                        row,
                        col,
                        label,
                        num_classes: c,
                    });
                }
            }
            confusion[(actual as usize - 1) * c + (predicted as usize - 1)] += 1;
        }
    }
    MetricsReport::from_confusion(&confusion, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::{MapProvenance, PredictMode};
    use alloc::borrow::ToOwned;

    fn map_of(labels: Vec<u16>, h: usize, w: usize, c: usize) -> ClassificationMap {
        ClassificationMap {
            height: h,
            width: w,
            num_classes: c,
            class_of: labels,
            logits: None,
            provenance: MapProvenance {
                mode: PredictMode::Image,
                padded: true,
                net: "test".to_owned(),
            },
        }
    }

    #[test]
    fn balanced_two_class_matrix() {
        let report = MetricsReport::from_confusion(&[40, 10, 10, 40], 2).unwrap();
        assert!((report.overall_accuracy - 0.8).abs() < 1e-12);
        assert!((report.average_accuracy - 0.8).abs() < 1e-12);
        assert!((report.kappa - 0.6).abs() < 1e-12);
        assert_eq!(report.pixels_evaluated, 100);
    }

    #[test]
    fn collapsed_prediction_gets_zero_kappa() {
        // Every pixel predicted as class 1 on a balanced scene: the
        // accuracy is pure chance and kappa must say so.
        let report = MetricsReport::from_confusion(&[50, 0, 50, 0], 2).unwrap();
        assert!((report.overall_accuracy - 0.5).abs() < 1e-12);
        assert!(report.kappa.abs() < 1e-12);
        assert!((report.average_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_single_class_degenerates_to_one() {
        let report = MetricsReport::from_confusion(&[7, 0, 0, 0], 2).unwrap();
        assert_eq!(report.kappa, 1.0);
        assert_eq!(report.overall_accuracy, 1.0);
        // Only the populated class enters the average.
        assert_eq!(report.average_accuracy, 1.0);
        assert!(report.per_class_recall[1].is_nan());
    }

    #[test]
    fn asymmetric_three_class_matrix() {
        // 3x3 oracle worked by hand: rows (actual) sums 10, 20, 10.
        let m = [8u64, 1, 1, 2, 16, 2, 0, 3, 7];
        let report = MetricsReport::from_confusion(&m, 3).unwrap();
        let n = 40.0;
        let oa = (8.0 + 16.0 + 7.0) / n;
        let aa = (0.8 + 0.8 + 0.7) / 3.0;
        let pe = (10.0 * 10.0 + 20.0 * 20.0 + 10.0 * 10.0) / (n * n);
        let kappa = (oa - pe) / (1.0 - pe);
        assert!((report.overall_accuracy - oa).abs() < 1e-12);
        assert!((report.average_accuracy - aa).abs() < 1e-12);
        assert!((report.kappa - kappa).abs() < 1e-12);
    }

    #[test]
    fn evaluate_counts_only_labeled_unexcluded_pixels() {
        let gt = GroundTruth::new(2, 3, vec![1, 1, 0, 2, 2, 1]).unwrap();
        let map = map_of(vec![1, 2, 1, 2, 2, 1], 2, 3, 2);
        let report = evaluate_map(&map, &gt, None).unwrap();
        assert_eq!(report.pixels_evaluated, 5);
        assert_eq!(report.confusion, vec![2, 1, 0, 2]);
        assert!((report.overall_accuracy - 0.8).abs() < 1e-12);

        // Excluding the one mistake leaves a perfect score.
        let mask = PixelMask::from_pixels(2, 3, [(0usize, 1usize)]);
        let report = evaluate_map(&map, &gt, Some(&mask)).unwrap();
        assert_eq!(report.pixels_evaluated, 4);
        assert_eq!(report.overall_accuracy, 1.0);
    }

    #[test]
    fn evaluate_rejects_gaps_and_mismatches() {
        let gt = GroundTruth::new(2, 2, vec![1, 2, 0, 1]).unwrap();
        let holey = map_of(vec![1, 0, 0, 1], 2, 2, 2);
        assert_eq!(
            evaluate_map(&holey, &gt, None),
            Err(MetricsError::UnpredictedPixel { row: 0, col: 1 })
        );

        let wrong_size = map_of(vec![1, 2], 1, 2, 2);
        assert!(matches!(
            evaluate_map(&wrong_size, &gt, None),
            Err(MetricsError::ExtentMismatch { .. })
        ));

        let wrong_classes = map_of(vec![1, 2, 1, 1], 2, 2, 3);
        assert!(matches!(
            evaluate_map(&wrong_classes, &gt, None),
            Err(MetricsError::ClassCountMismatch { map: 3, gt: 2 })
        ));

        // Masking away every labeled pixel leaves nothing to score.
        let map = map_of(vec![1, 2, 1, 1], 2, 2, 2);
        let all = PixelMask::from_pixels(2, 2, [(0, 0), (0, 1), (1, 1)]);
        assert_eq!(evaluate_map(&map, &gt, Some(&all)), Err(MetricsError::NoPixels));
    }

    #[test]
    fn masks_combine_and_count() {
        let a = PixelMask::from_pixels(2, 2, [(0, 0)]);
        let b = PixelMask::from_pixels(2, 2, [(1, 1), (0, 0)]);
        let u = a.union(&b).unwrap();
        assert_eq!(u.count(), 2);
        assert!(u.contains(0, 0) && u.contains(1, 1));
        assert!(!u.contains(0, 1));
        assert!(a.union(&PixelMask::new(3, 2)).is_err());
    }
}
