use serde::{Deserialize, Serialize};

use super::geometry::iou;
use super::nms::detection_order;
use crate::dataset::{Annotation, ClassLabel, PerClass};
use crate::detect::RawDetection;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// True/false positive and false negative counts for one image (or a pool
/// of images), per class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub counts: PerClass<ClassCounts>,
}

impl MatchResult {
    pub fn add(&mut self, other: &MatchResult) {
        for c in ClassLabel::ALL {
            self.counts[c].add(&other.counts[c]);
        }
    }

    pub fn pooled(&self) -> ClassCounts {
        let mut total = ClassCounts::default();
        for c in self.counts.values() {
            total.add(c);
        }
        total
    }
}

/// Greedy one-to-one matching of one image's detections to its truth.
///
/// Per class, detections are visited in canonical score order; each claims
/// the unmatched same-class truth box with the highest IoU strictly above
/// `iou_threshold` (lowest index on ties) and counts as a true positive, or
/// counts as a false positive if none qualifies. Unclaimed truths are false
/// negatives.
pub fn match_detections(dets: &[RawDetection], truth: &[Annotation], iou_threshold: f64) -> MatchResult {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut result = MatchResult::default();
    for class in ClassLabel::ALL {
        let gts: Vec<_> = truth.iter().filter(|a| a.label == class).map(|a| a.bbox).collect();
        let mut taken = vec![false; gts.len()];
        let counts = &mut result.counts[class];
        for d in sorted.iter().filter(|d| d.label == class) {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&d.bbox, g);
                if v > iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[gi] = true;
                    counts.tp += 1;
                }
                None => counts.fp += 1,
            }
        }
        counts.fn_ = taken.iter().filter(|t| !**t).count() as u64;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::BoundingBox;

    fn b(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + 10.0, 10.0)
    }

    #[test]
    fn no_detections_all_missed() {
        let truth = vec![Annotation::new(ClassLabel::HW, b(0.0)); 3];
        let m = match_detections(&[], &truth, 0.5);
        assert_eq!(m.counts[ClassLabel::HW], ClassCounts { tp: 0, fp: 0, fn_: 3 });
    }

    #[test]
    fn exact_hit() {
        let truth = [Annotation::new(ClassLabel::Tri, b(4.0))];
        let d = RawDetection { bbox: b(4.0), label: ClassLabel::Tri, score: 0.6 };
        let m = match_detections(&[d], &truth, 0.5);
        assert_eq!(m.counts[ClassLabel::Tri], ClassCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(m.pooled(), ClassCounts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let truth = [Annotation::new(ClassLabel::AL, b(0.0))];
        let d1 = RawDetection { bbox: b(1.0), label: ClassLabel::AL, score: 0.8 };
        let d2 = RawDetection { bbox: b(0.5), label: ClassLabel::AL, score: 0.9 };
        let m = match_detections(&[d1, d2], &truth, 0.5);
        assert_eq!(m.counts[ClassLabel::AL], ClassCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn wrong_class_does_not_match() {
        let truth = [Annotation::new(ClassLabel::AL, b(0.0))];
        let d = RawDetection { bbox: b(0.0), label: ClassLabel::OV, score: 0.9 };
        let m = match_detections(&[d], &truth, 0.5);
        assert_eq!(m.counts[ClassLabel::AL].fn_, 1);
        assert_eq!(m.counts[ClassLabel::OV].fp, 1);
    }

    #[test]
    fn iou_exactly_at_threshold_is_negative() {
        let truth = [Annotation::new(ClassLabel::TS, b(0.0))];
        let d = RawDetection { bbox: b(5.0), label: ClassLabel::TS, score: 0.9 };
        let m = match_detections(&[d], &truth, 1.0 / 3.0);
        assert_eq!(m.counts[ClassLabel::TS], ClassCounts { tp: 0, fp: 1, fn_: 1 });
    }
}
