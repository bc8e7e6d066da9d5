use std::cmp::Ordering;

use super::geometry::iou;
use crate::detect::RawDetection;

/// Canonical detection order: score descending, then box coordinates
/// ascending, then label.
pub fn detection_order(a: &RawDetection, b: &RawDetection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.lexical_cmp(&b.bbox))
        .then_with(|| a.label.cmp(&b.label))
}

/// Greedy non-maximum suppression.
///
/// Repeatedly keeps the best remaining detection and drops every remaining
/// detection (of the same class when `class_aware`) whose IoU with it is
/// strictly above `iou_threshold`. Output is in canonical order.
pub fn nms(dets: &[RawDetection], iou_threshold: f64, class_aware: bool) -> Vec<RawDetection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut suppressed = vec![false; sorted.len()];
    let mut keep = Vec::with_capacity(sorted.len());
    for i in 0..sorted.len() {
        if suppressed[i] {
            continue;
        }
        let kept = sorted[i];
        keep.push(kept);
        for (j, cand) in sorted.iter().enumerate().skip(i + 1) {
            if suppressed[j] || (class_aware && cand.label != kept.label) {
                continue;
            }
            if iou(&kept.bbox, &cand.bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}
