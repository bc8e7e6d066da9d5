//! Geometry and evaluation kernel: IoU, NMS, one-to-one matching,
//! precision/recall and fold averaging.

mod geometry;
mod matching;
mod metrics;
mod nms;

pub use geometry::{iou, BoundingBox};
pub use matching::{match_detections, ClassCounts, MatchResult};
pub use metrics::{average_over_folds, precision_recall, ClassReport, EvaluationReport, Metric, PrecisionRecall};
pub use nms::{detection_order, nms};

/// IoU threshold used for both suppression and matching.
pub const IOU_THRESHOLD: f64 = 0.5;
