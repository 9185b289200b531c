//! Classification error, non-interpolated average precision, and point
//! localization scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil_pooling::LabelVector;

/// Default localization tolerance in pixels.
pub const DEFAULT_TOLERANCE_PX: f64 = 18.0;

/// Percentage of samples whose thresholded score (`p >= 0.5` means
/// positive) disagrees with the truth.
pub fn classification_error(probs: &[f64], truth: &[bool]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if probs.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            probs.len(),
            truth.len()
        )));
    }
    let wrong = probs
        .iter()
        .zip(truth)
        .filter(|(&p, &t)| (p >= 0.5) != t)
        .count();
    Ok(100.0 * wrong as f64 / probs.len() as f64)
}

pub fn classification_accuracy(probs: &[f64], truth: &[bool]) -> Result<f64> {
    Ok(100.0 - classification_error(probs, truth)?)
}

/// `sum_k (recall_k - recall_{k-1}) * precision_k` over the ranking by
/// descending score, ties broken by ascending sample index.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite);
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanApReport {
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub undefined_classes: usize,
}

/// Per-class AP averaged over classes with at least one positive.
/// `scores[c]` and `truth[c]` hold one entry per sample.
pub fn mean_average_precision(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<MeanApReport> {
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut per_class = Vec::with_capacity(scores.len());
    for (s, t) in scores.iter().zip(truth) {
        per_class.push(match average_precision(s, t) {
            Ok(ap) => Some(ap),
            Err(Error::UndefinedAp) => None,
            Err(e) => return Err(e),
        });
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MeanApReport {
        undefined_classes: per_class.len() - defined.len(),
        per_class,
        mean,
    })
}

/// Axis-aligned rectangle in pixel coordinates, edges inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::InvalidParams("bounding box must have positive area".into()));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn contains_within(&self, row: f64, col: f64, tolerance: f64) -> bool {
        col >= self.x_min - tolerance
            && col <= self.x_max + tolerance
            && row >= self.y_min - tolerance
            && row <= self.y_max + tolerance
    }
}

/// True when `(row, col)` lies in some box grown by `tolerance` pixels on
/// every side.
pub fn point_localization_correct(point: (f64, f64), boxes: &[BoundingBox], tolerance: f64) -> bool {
    assert!(tolerance >= 0.0, "tolerance must be non-negative");
    boxes
        .iter()
        .any(|b| b.contains_within(point.0, point.1, tolerance))
}

/// One evaluated image (or sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scores: Vec<f64>,
    pub truth: LabelVector,
    /// Per-class predicted `(row, col)` peak.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<(f64, f64)>>,
    /// Per-class ground-truth boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<Vec<BoundingBox>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub classes: usize,
    pub per_class_ap: Vec<Option<f64>>,
    pub mean_ap: Option<f64>,
    pub undefined_ap_classes: usize,
    pub error_percent: f64,
    pub accuracy_percent: f64,
    /// Over (sample, present class) pairs with a predicted point; `None`
    /// when no record carries localization data.
    pub localization_accuracy: Option<f64>,
    pub localization_evaluated: usize,
}

pub fn evaluate(records: &[PredictionRecord], tolerance: f64) -> Result<MetricReport> {
    let first = records.first().ok_or(Error::EmptyEvaluation)?;
    let n = first.scores.len();
    for r in records {
        if r.scores.len() != n || r.truth.len() != n {
            return Err(Error::Shape("records disagree on the class count".into()));
        }
    }
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|c| records.iter().map(|r| r.scores[c]).collect())
        .collect();
    let truth: Vec<Vec<bool>> = (0..n)
        .map(|c| records.iter().map(|r| r.truth.get(c)).collect())
        .collect();
    let ap = mean_average_precision(&scores, &truth)?;
    let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let flat_truth: Vec<bool> = truth.iter().flatten().copied().collect();
    let error = classification_error(&flat_scores, &flat_truth)?;

    let mut evaluated = 0usize;
    let mut correct = 0usize;
    for r in records {
        let (Some(points), Some(boxes)) = (&r.points, &r.boxes) else {
            continue;
        };
        for c in 0..n {
            if !r.truth.get(c) {
                continue;
            }
            let (Some(&p), Some(b)) = (points.get(c), boxes.get(c)) else {
                continue;
            };
            evaluated += 1;
            if point_localization_correct(p, b, tolerance) {
                correct += 1;
            }
        }
    }
    Ok(MetricReport {
        samples: records.len(),
        classes: n,
        per_class_ap: ap.per_class,
        mean_ap: ap.mean,
        undefined_ap_classes: ap.undefined_classes,
        error_percent: error,
        accuracy_percent: 100.0 - error,
        localization_accuracy: (evaluated > 0).then(|| correct as f64 / evaluated as f64),
        localization_evaluated: evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn error_examples() {
        assert_eq!(classification_error(&[0.9, 0.1], &[true, false]).unwrap(), 0.0);
        assert_eq!(
            classification_error(&[0.9, 0.1, 0.6, 0.2], &[true, true, false, false]).unwrap(),
            50.0
        );
        assert!(matches!(classification_error(&[], &[]), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn ap_examples() {
        let t = [true, true, true, false, false, false];
        assert_eq!(average_precision(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &t).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
        // tie: index 0 ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(matches!(average_precision(&[0.1], &[false]), Err(Error::UndefinedAp)));
    }

    #[test]
    fn map_skips_undefined_classes() {
        let r = mean_average_precision(
            &[vec![0.9, 0.1], vec![0.3, 0.2]],
            &[vec![false, true], vec![false, false]],
        )
        .unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), None]);
        assert_eq!(r.mean, Some(0.5));
        assert_eq!(r.undefined_classes, 1);
    }

    #[test]
    fn localization_tolerance_boundary() {
        let b = [BoundingBox::new(100.0, 50.0, 200.0, 150.0).unwrap()];
        assert!(point_localization_correct((100.0, 150.0), &b, 18.0));
        assert!(point_localization_correct((100.0, 218.0), &b, 18.0));
        assert!(!point_localization_correct((100.0, 219.0), &b, 18.0));
        assert!(point_localization_correct((32.0, 150.0), &b, 18.0));
        assert!(!point_localization_correct((31.0, 150.0), &b, 18.0));
        assert!(point_localization_correct((150.0, 200.0), &b, 0.0));
        assert!(!point_localization_correct((0.0, 0.0), &[], 18.0));
        assert!(BoundingBox::new(1.0, 1.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn evaluate_report() {
        let bx = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let recs = vec![
            PredictionRecord {
                scores: vec![0.9, 0.2],
                truth: LabelVector::new(vec![true, false]),
                points: Some(vec![(5.0, 5.0), (0.0, 0.0)]),
                boxes: Some(vec![vec![bx], vec![]]),
            },
            PredictionRecord {
                scores: vec![0.4, 0.7],
                truth: LabelVector::new(vec![true, true]),
                points: Some(vec![(50.0, 50.0), (1.0, 1.0)]),
                boxes: Some(vec![vec![bx], vec![bx]]),
            },
        ];
        let r = evaluate(&recs, 18.0).unwrap();
        assert_eq!(r.per_class_ap, vec![Some(1.0), Some(1.0)]);
        assert_eq!(r.error_percent, 25.0);
        assert_eq!(r.localization_evaluated, 3);
        assert_eq!(r.localization_accuracy, Some(2.0 / 3.0));
    }

    fn brute_force_ap(scores: &[f64], truth: &[bool]) -> f64 {
        // rank of i = number of samples ordered strictly before it, plus one
        let before = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
        let pos: Vec<usize> = (0..scores.len()).filter(|&i| truth[i]).collect();
        let mut total = 0.0;
        for &i in &pos {
            let rank = (0..scores.len()).filter(|&j| before(j, i)).count() + 1;
            let hits = pos.iter().filter(|&&j| j == i || before(j, i)).count();
            total += hits as f64 / rank as f64;
        }
        total / pos.len() as f64
    }

    proptest! {
        #[test]
        fn ap_matches_brute_force(
            data in prop::collection::vec((0u8..20, any::<bool>()), 1..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 7.0).collect();
            let truth: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(truth.iter().any(|&t| t));
            let ap = average_precision(&scores, &truth).unwrap();
            prop_assert!((ap - brute_force_ap(&scores, &truth)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn ap_invariant_under_monotone_transform(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let truth: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(truth.iter().any(|&t| t));
            let squashed: Vec<f64> = scores.iter().map(|s| crate::scalar::sigmoid(*s) * 3.0 + 1.0).collect();
            prop_assert_eq!(average_precision(&scores, &truth).unwrap(),
                            average_precision(&squashed, &truth).unwrap());
        }

        #[test]
        fn error_and_accuracy_sum_to_100(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..300)
        ) {
            let p: Vec<f64> = data.iter().map(|d| d.0).collect();
            let t: Vec<bool> = data.iter().map(|d| d.1).collect();
            let e = classification_error(&p, &t).unwrap();
            prop_assert_eq!(e + classification_accuracy(&p, &t).unwrap(), 100.0);
        }
    }
}
