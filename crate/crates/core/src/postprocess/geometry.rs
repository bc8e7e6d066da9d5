use serde::{Deserialize, Serialize};

/// Axis-aligned box in continuous pixel coordinates. Serialises as
/// `[xmin, ymin, xmax, ymax]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([xmin, ymin, xmax, ymax]: [f64; 4]) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl BoundingBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub const fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.xmin < self.xmax && self.ymin < self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let b = BoundingBox::new(
            self.xmin.clamp(0.0, width),
            self.ymin.clamp(0.0, height),
            self.xmax.clamp(0.0, width),
            self.ymax.clamp(0.0, height),
        );
        b.is_valid().then_some(b)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BoundingBox {
        BoundingBox::new(self.xmin * sx, self.ymin * sy, self.xmax * sx, self.ymax * sy)
    }

    /// Smallest box containing all `points`.
    pub fn enclosing(points: &[(f64, f64)]) -> BoundingBox {
        let mut b = BoundingBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            b.xmin = b.xmin.min(x);
            b.ymin = b.ymin.min(y);
            b.xmax = b.xmax.max(x);
            b.ymax = b.ymax.max(y);
        }
        b
    }

    pub(crate) fn lexical_cmp(&self, other: &BoundingBox) -> std::cmp::Ordering {
        self.xmin
            .total_cmp(&other.xmin)
            .then(self.ymin.total_cmp(&other.ymin))
            .then(self.xmax.total_cmp(&other.xmax))
            .then(self.ymax.total_cmp(&other.ymax))
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_disjoint() {
        let a = BoundingBox::new(3.5, 1.25, 17.0, 9.75);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BoundingBox::new(20.0, 0.0, 30.0, 5.0);
        assert_eq!(iou(&a, &b), 0.0);
        // touching edges share no interior
        let c = BoundingBox::new(17.0, 1.25, 20.0, 9.75);
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn half_overlap_is_one_third() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(5.0, 0.0, 15.0, 10.0);
        assert_eq!(iou(&a, &b), 50.0 / 150.0);
    }

    #[test]
    fn clip_drops_outside_boxes() {
        let b = BoundingBox::new(-5.0, 2.0, 5.0, 8.0);
        assert_eq!(b.clip(10.0, 10.0), Some(BoundingBox::new(0.0, 2.0, 5.0, 8.0)));
        assert_eq!(BoundingBox::new(11.0, 0.0, 15.0, 3.0).clip(10.0, 10.0), None);
    }

    #[test]
    fn serialises_as_array() {
        let b = BoundingBox::new(1.0, 2.0, 3.5, 4.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.5,4.0]");
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0f64..50.0, 0.0f64..50.0, 0.1f64..40.0, 0.1f64..40.0)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
