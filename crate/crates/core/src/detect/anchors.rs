use crate::postprocess::{iou, BoundingBox};

/// Normalisation of regression deltas `(dx, dy, dw, dh)`.
pub(crate) const DELTA_STD: [f64; 4] = [0.1, 0.1, 0.2, 0.2];
/// Largest `dw`/`dh` accepted when decoding, in log space.
const MAX_LOG_SCALE: f64 = 4.135; // ln(1000 / 16)

/// Anchor boxes for a `fh x fw` feature map of the given stride, ordered
/// anchor-major: index `a * fh * fw + y * fw + x`.
pub(crate) fn anchor_grid(fh: usize, fw: usize, stride: f64, sizes: &[f64], ratios: &[f64]) -> Vec<BoundingBox> {
    let mut out = Vec::with_capacity(sizes.len() * ratios.len() * fh * fw);
    for &s in sizes {
        for &r in ratios {
            let (w, h) = (s / r.sqrt(), s * r.sqrt());
            for y in 0..fh {
                for x in 0..fw {
                    let (cx, cy) = ((x as f64 + 0.5) * stride, (y as f64 + 0.5) * stride);
                    out.push(BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0));
                }
            }
        }
    }
    out
}

pub(crate) fn encode(anchor: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (gx - ax) / aw / DELTA_STD[0],
        (gy - ay) / ah / DELTA_STD[1],
        (gt.width() / aw).ln() / DELTA_STD[2],
        (gt.height() / ah).ln() / DELTA_STD[3],
    ]
}

pub(crate) fn decode(anchor: &BoundingBox, d: [f64; 4]) -> BoundingBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + d[0] * DELTA_STD[0] * aw;
    let cy = ay + d[1] * DELTA_STD[1] * ah;
    let w = aw * (d[2] * DELTA_STD[2]).min(MAX_LOG_SCALE).exp();
    let h = ah * (d[3] * DELTA_STD[3]).min(MAX_LOG_SCALE).exp();
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

/// Training role of one anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Assignment {
    Negative,
    Ignore,
    /// Index of the matched ground-truth box.
    Positive(usize),
}

/// Positive when IoU with some box reaches `pos_iou`, and every box also
/// claims its best-overlapping anchor; negative below `neg_iou`.
pub(crate) fn assign(anchors: &[BoundingBox], truth: &[BoundingBox], pos_iou: f64, neg_iou: f64) -> Vec<Assignment> {
    let mut best: Vec<(f64, usize)> = vec![(0.0, 0); anchors.len()];
    let mut gt_best: Vec<(f64, usize)> = vec![(0.0, 0); truth.len()];
    for (i, a) in anchors.iter().enumerate() {
        for (j, g) in truth.iter().enumerate() {
            let v = iou(a, g);
            if v > best[i].0 {
                best[i] = (v, j);
            }
            if v > gt_best[j].0 {
                gt_best[j] = (v, i);
            }
        }
    }
    let mut out: Vec<Assignment> = best
        .iter()
        .map(|&(v, j)| {
            if v >= pos_iou {
                Assignment::Positive(j)
            } else if v < neg_iou {
                Assignment::Negative
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    for (j, &(v, i)) in gt_best.iter().enumerate() {
        if v > 0.0 {
            out[i] = Assignment::Positive(j);
        }
    }
    out
}
