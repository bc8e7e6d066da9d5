use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::postprocess::BoundingBox;

/// Geometric augmentation: optional flips, a quarter-turn rotation and a
/// small-angle jitter, applied in that order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineSpec {
    /// Counter-clockwise quarter turns, one of 0, 90, 180, 270.
    pub rotation: u32,
    /// Extra counter-clockwise rotation in degrees, within [-15, 15].
    pub jitter_deg: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AffineSpec {
    pub const MAX_JITTER: f64 = 15.0;

    pub fn is_identity(&self) -> bool {
        self.rotation % 360 == 0 && self.jitter_deg == 0.0 && !self.flip_h && !self.flip_v
    }

    pub fn is_valid(&self) -> bool {
        self.rotation % 90 == 0 && self.rotation < 360 && self.jitter_deg.abs() <= Self::MAX_JITTER
    }
}

/// Distribution over [`AffineSpec`]s used for training-time augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineSampler {
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    /// Draw the quarter-turn rotation uniformly from {0, 90, 180, 270}.
    pub quarter_turns: bool,
    /// Jitter is uniform in `[-max_jitter_deg, max_jitter_deg]`.
    pub max_jitter_deg: f64,
}

impl Default for AffineSampler {
    fn default() -> Self {
        Self {
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            quarter_turns: true,
            max_jitter_deg: 0.0,
        }
    }
}

impl AffineSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> AffineSpec {
        let flip_h = rng.random_bool(self.flip_h_prob.clamp(0.0, 1.0));
        let flip_v = rng.random_bool(self.flip_v_prob.clamp(0.0, 1.0));
        let rotation = if self.quarter_turns { 90 * rng.random_range(0..4u32) } else { 0 };
        let m = self.max_jitter_deg.clamp(0.0, AffineSpec::MAX_JITTER);
        let jitter_deg = if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        AffineSpec {
            rotation,
            jitter_deg,
            flip_h,
            flip_v,
        }
    }
}

fn flip_h(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y))
}

fn flip_v(img: &Image) -> Image {
    let h = img.height();
    Image::from_fn(img.width(), h, |x, y| img.pixel(x, h - 1 - y))
}

/// Quarter turn counter-clockwise as displayed: `(x, y) -> (y, W - x)`.
fn rot90(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.height(), w, |x, y| img.pixel(w - 1 - y, x))
}

fn rotate_small(img: &Image, deg: f64) -> Image {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let t = deg.to_radians();
    let (c, s) = (t.cos(), t.sin());
    Image::from_fn(img.width(), img.height(), |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        // inverse of the forward map in `rotate_point`
        let sx = cx + c * dx - s * dy;
        let sy = cy + s * dx + c * dy;
        img.sample_bilinear(sx as f32, sy as f32)
    })
}

fn rotate_point((x, y): (f64, f64), deg: f64, cx: f64, cy: f64) -> (f64, f64) {
    let t = deg.to_radians();
    let (c, s) = (t.cos(), t.sin());
    let (dx, dy) = (x - cx, y - cy);
    // counter-clockwise on screen (y grows downwards)
    (cx + c * dx + s * dy, cy - s * dx + c * dy)
}

/// Maps a continuous point through `spec` for an image of `(w, h)`.
/// Returns the point and the output image size.
pub fn transform_point(spec: &AffineSpec, (w, h): (f64, f64), p: (f64, f64)) -> ((f64, f64), (f64, f64)) {
    let (mut x, mut y) = p;
    if spec.flip_h {
        x = w - x;
    }
    if spec.flip_v {
        y = h - y;
    }
    let (mut cw, mut ch) = (w, h);
    for _ in 0..(spec.rotation / 90) % 4 {
        (x, y) = (y, cw - x);
        (cw, ch) = (ch, cw);
    }
    if spec.jitter_deg != 0.0 {
        (x, y) = rotate_point((x, y), spec.jitter_deg, cw / 2.0, ch / 2.0);
    }
    ((x, y), (cw, ch))
}

fn transform_image(img: &Image, spec: &AffineSpec) -> Image {
    let mut out = img.clone();
    if spec.flip_h {
        out = flip_h(&out);
    }
    if spec.flip_v {
        out = flip_v(&out);
    }
    for _ in 0..(spec.rotation / 90) % 4 {
        out = rot90(&out);
    }
    if spec.jitter_deg != 0.0 {
        out = rotate_small(&out, spec.jitter_deg);
    }
    out
}

fn transform_box(spec: &AffineSpec, size: (f64, f64), b: &BoundingBox) -> Option<BoundingBox> {
    let mut out_size = size;
    let corners = [(b.xmin, b.ymin), (b.xmax, b.ymin), (b.xmin, b.ymax), (b.xmax, b.ymax)].map(|c| {
        let (p, s) = transform_point(spec, size, c);
        out_size = s;
        p
    });
    BoundingBox::enclosing(&corners).clip(out_size.0, out_size.1)
}

/// Transforms the image and its boxes together. Each box becomes the
/// axis-aligned hull of its transformed corners, clipped to the output
/// image; boxes with nothing left inside are dropped.
pub fn affine_augment(img: &Image, boxes: &[BoundingBox], spec: &AffineSpec) -> (Image, Vec<BoundingBox>) {
    let size = (img.width() as f64, img.height() as f64);
    let mapped = boxes.iter().filter_map(|b| transform_box(spec, size, b)).collect();
    (transform_image(img, spec), mapped)
}

/// [`affine_augment`] over annotations, keeping each label with its box.
pub fn affine_augment_annotated(
    img: &Image,
    annotations: &[crate::dataset::Annotation],
    spec: &AffineSpec,
) -> (Image, Vec<crate::dataset::Annotation>) {
    let size = (img.width() as f64, img.height() as f64);
    let anns = annotations
        .iter()
        .filter_map(|a| transform_box(spec, size, &a.bbox).map(|b| crate::dataset::Annotation::new(a.label, b)))
        .collect();
    (transform_image(img, spec), anns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_image(w: usize, h: usize, r: (usize, usize, usize, usize)) -> Image {
        Image::from_fn(w, h, |x, y| {
            if x >= r.0 && x < r.2 && y >= r.1 && y < r.3 {
                [1.0; 3]
            } else {
                [0.0; 3]
            }
        })
    }

    /// Tight box of pixels brighter than one half.
    fn mask_box(img: &Image) -> Option<BoundingBox> {
        let mut pts = Vec::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.pixel(x, y)[0] > 0.5 {
                    pts.push((x as f64, y as f64));
                    pts.push((x as f64 + 1.0, y as f64 + 1.0));
                }
            }
        }
        (!pts.is_empty()).then(|| BoundingBox::enclosing(&pts))
    }

    #[test]
    fn identity_spec() {
        let img = mask_image(12, 9, (2, 3, 7, 8));
        let boxes = [BoundingBox::new(2.0, 3.0, 7.0, 8.0)];
        let (out, ob) = affine_augment(&img, &boxes, &AffineSpec::default());
        assert_eq!(out, img);
        assert_eq!(ob, boxes);
    }

    #[test]
    fn horizontal_flip_reflects_x() {
        let img = Image::new(100, 40);
        let spec = AffineSpec {
            flip_h: true,
            ..Default::default()
        };
        let (_, b) = affine_augment(&img, &[BoundingBox::new(0.0, 0.0, 10.0, 10.0)], &spec);
        assert_eq!(b, vec![BoundingBox::new(90.0, 0.0, 100.0, 10.0)]);
    }

    #[test]
    fn full_turn_composition_is_identity() {
        let img = mask_image(30, 20, (3, 4, 11, 9));
        let b0 = vec![BoundingBox::new(3.0, 4.0, 11.0, 9.0)];
        let r90 = AffineSpec {
            rotation: 90,
            ..Default::default()
        };
        let r180 = AffineSpec {
            rotation: 180,
            ..Default::default()
        };
        let (i1, b1) = affine_augment(&img, &b0, &r90);
        assert_eq!(i1.dims(), (20, 30));
        let (i2, b2) = affine_augment(&i1, &b1, &r90);
        let (i3, b3) = affine_augment(&i2, &b2, &r180);
        assert_eq!(b3, b0);
        assert_eq!(i3, img);
    }

    #[test]
    fn boxes_leaving_the_frame_are_dropped() {
        let img = Image::new(40, 40);
        let spec = AffineSpec {
            jitter_deg: 15.0,
            ..Default::default()
        };
        let (_, b) = affine_augment(&img, &[BoundingBox::new(0.0, 0.0, 0.5, 0.5)], &spec);
        assert!(b.is_empty());
    }

    proptest! {
        #[test]
        fn exact_transforms_commute_with_mask_boxes(
            w in 8usize..24, h in 8usize..24,
            x0 in 0usize..6, y0 in 0usize..6, bw in 1usize..8, bh in 1usize..8,
            rot in 0u32..4, fh in any::<bool>(), fv in any::<bool>()
        ) {
            let r = (x0, y0, (x0 + bw).min(w), (y0 + bh).min(h));
            let img = mask_image(w, h, r);
            let truth = mask_box(&img).unwrap();
            let spec = AffineSpec { rotation: rot * 90, jitter_deg: 0.0, flip_h: fh, flip_v: fv };
            let (out, boxes) = affine_augment(&img, &[truth], &spec);
            prop_assert_eq!(boxes, vec![mask_box(&out).unwrap()]);
        }

        #[test]
        fn jittered_box_contains_object_mask(
            x0 in 6usize..12, y0 in 6usize..12, bw in 2usize..10, bh in 2usize..10,
            deg in -15.0f64..15.0
        ) {
            let img = mask_image(32, 32, (x0, y0, x0 + bw, y0 + bh));
            let spec = AffineSpec { rotation: 0, jitter_deg: deg, flip_h: false, flip_v: false };
            let truth = BoundingBox::new(x0 as f64, y0 as f64, (x0 + bw) as f64, (y0 + bh) as f64);
            let (out, boxes) = affine_augment(&img, &[truth], &spec);
            let b = boxes[0];
            for y in 0..32 {
                for x in 0..32 {
                    if out.pixel(x, y)[0] > 0.5 {
                        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                        prop_assert!(cx >= b.xmin - 1e-9 && cx <= b.xmax + 1e-9);
                        prop_assert!(cy >= b.ymin - 1e-9 && cy <= b.ymax + 1e-9);
                    }
                }
            }
        }
    }
}
