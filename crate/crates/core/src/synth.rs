//! Procedural toy corpus: microscope-like textured backgrounds with debris
//! and one egg class per image, each class with its own shape and texture.
//! Ground-truth boxes are the exact bounds of the drawn ellipses.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Annotation, ClassLabel, DatasetManifest, ImageRecord};
use crate::degrade::Image;
use crate::error::{Error, Result};
use crate::postprocess::BoundingBox;
use crate::seed::rng_for;

/// An in-memory annotated corpus.
#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub manifest: DatasetManifest,
    pub images: Vec<Image>,
}

impl ToyCorpus {
    pub fn image(&self, id: &str) -> Option<&Image> {
        let i = self.manifest.records().iter().position(|r| r.id == id)?;
        Some(&self.images[i])
    }

    /// Writes `images/<id>.png` plus `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        for (r, img) in self.manifest.records().iter().zip(&self.images) {
            img.save(&dir.join(&r.path))?;
        }
        self.manifest.save(&dir.join("manifest.json"))
    }
}

#[derive(Clone, Copy, Debug)]
struct Egg {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Egg {
    fn bbox(&self) -> BoundingBox {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let hx = (self.a * self.a * c * c + self.b * self.b * s * s).sqrt();
        let hy = (self.a * self.a * s * s + self.b * self.b * c * c).sqrt();
        BoundingBox::new(self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }

    /// Coordinates in the egg frame, normalised by the semi-axes.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        ((c * dx + s * dy) / self.a, (-s * dx + c * dy) / self.b)
    }
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
}

fn jitter_color<R: Rng>(rng: &mut R, c: [f32; 3], amount: f32) -> [f32; 3] {
    c.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// Semi-axes `(a, b)` in pixels for a class, before per-image scaling.
fn class_shape<R: Rng>(rng: &mut R, label: ClassLabel) -> (f64, f64) {
    match label {
        ClassLabel::AL => {
            let a = rng.random_range(8.5..10.5);
            (a, a * rng.random_range(0.8..0.92))
        }
        ClassLabel::HW => {
            let a = rng.random_range(10.5..12.5);
            (a, a * rng.random_range(0.55..0.65))
        }
        ClassLabel::OV => {
            let a = rng.random_range(5.0..6.2);
            (a, a * rng.random_range(0.6..0.7))
        }
        ClassLabel::TS => {
            let a = rng.random_range(6.5..8.0);
            (a, a * rng.random_range(0.92..1.0))
        }
        ClassLabel::Tri => {
            let a = rng.random_range(9.5..11.0);
            (a, a * rng.random_range(0.45..0.52))
        }
    }
}

/// Colour of an egg at local coordinates `(u, v)` with `r = |(u, v)|`.
fn egg_color(label: ClassLabel, base: [f32; 3], u: f64, v: f64, r: f64) -> [f32; 3] {
    let dark = [0.25, 0.17, 0.08];
    match label {
        // thick bumpy shell around a granular core
        ClassLabel::AL => {
            let bump = 0.06 * (u.atan2(v) * 14.0).sin();
            if r > 0.72 + bump {
                mix(base, dark, 0.55)
            } else {
                mix(base, [0.9, 0.75, 0.35], 0.3 + 0.2 * ((u * 9.0).sin() * (v * 9.0).cos()) as f32)
            }
        }
        // pale, thin-shelled with a few blastomeres inside
        ClassLabel::HW => {
            if r > 0.9 {
                mix(base, dark, 0.6)
            } else {
                let cells = ((u * 5.0).cos() * (v * 5.0).cos()).max(0.0) as f32;
                mix([0.86, 0.88, 0.86], [0.62, 0.66, 0.58], cells * 0.8)
            }
        }
        // small dark operculated egg
        ClassLabel::OV => {
            if u > 0.8 {
                mix(base, [0.85, 0.75, 0.45], 0.6)
            } else {
                mix(base, dark, 0.65)
            }
        }
        // radially striated embryophore
        ClassLabel::TS => {
            if r > 0.62 {
                let stripe = (0.5 + 0.5 * (u.atan2(v) * 18.0).sin()) as f32;
                mix(base, dark, 0.45 + 0.35 * stripe)
            } else {
                mix(base, [0.55, 0.5, 0.3], 0.6)
            }
        }
        // barrel with bright polar plugs
        ClassLabel::Tri => {
            if u.abs() > 0.82 && v.abs() < 0.35 {
                [0.95, 0.93, 0.8]
            } else if r > 0.8 {
                mix(base, dark, 0.7)
            } else {
                mix(base, [0.7, 0.5, 0.2], 0.6)
            }
        }
    }
}

fn class_base(label: ClassLabel) -> [f32; 3] {
    match label {
        ClassLabel::AL => [0.72, 0.58, 0.28],
        ClassLabel::HW => [0.78, 0.8, 0.76],
        ClassLabel::OV => [0.55, 0.42, 0.2],
        ClassLabel::TS => [0.5, 0.38, 0.2],
        ClassLabel::Tri => [0.62, 0.42, 0.18],
    }
}

fn background<R: Rng>(rng: &mut R, size: usize) -> Image {
    let base = jitter_color(rng, [0.86, 0.82, 0.68], 0.04);
    let waves: Vec<(f64, f64, f64, f32)> = (0..4)
        .map(|_| {
            let ang = rng.random_range(0.0..PI);
            let freq = rng.random_range(0.05..0.25);
            (ang.cos() * freq, ang.sin() * freq, rng.random_range(0.0..2.0 * PI), rng.random_range(0.01..0.04))
        })
        .collect();
    let mut grain = rng_for(rng.random(), &["grain"]);
    Image::from_fn(size, size, |x, y| {
        let mut shade = 0.0f32;
        for &(fx, fy, ph, amp) in &waves {
            shade += amp * ((fx * x as f64 + fy * y as f64 + ph).sin() as f32);
        }
        let n: f32 = grain.random_range(-0.02..0.02);
        base.map(|v| (v + shade + n).clamp(0.0, 1.0))
    })
}

fn paint_ellipse(img: &mut Image, egg: &Egg, mut color: impl FnMut(f64, f64, f64) -> [f32; 3]) {
    let bb = egg.bbox();
    let (w, h) = img.dims();
    let x0 = bb.xmin.floor().max(0.0) as usize;
    let y0 = bb.ymin.floor().max(0.0) as usize;
    let x1 = (bb.xmax.ceil() as usize).min(w);
    let y1 = (bb.ymax.ceil() as usize).min(h);
    let edge = egg.a.min(egg.b);
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = egg.local(x as f64 + 0.5, y as f64 + 0.5);
            let r = (u * u + v * v).sqrt();
            // ~1px anti-aliased rim
            let alpha = ((1.0 - r) * edge + 0.5).clamp(0.0, 1.0) as f32;
            if alpha <= 0.0 {
                continue;
            }
            let c = color(u, v, r);
            let p = img.pixel(x, y);
            img.set_pixel(x, y, mix(p, c, alpha));
        }
    }
}

fn place<R: Rng>(rng: &mut R, size: f64, a: f64, b: f64, others: &[Egg]) -> Option<Egg> {
    for _ in 0..50 {
        let egg = Egg {
            cx: rng.random_range(a + 1.0..size - a - 1.0),
            cy: rng.random_range(a + 1.0..size - a - 1.0),
            a,
            b,
            theta: rng.random_range(0.0..PI),
        };
        let far = others.iter().all(|o| {
            let d = ((o.cx - egg.cx).powi(2) + (o.cy - egg.cy).powi(2)).sqrt();
            d > o.a + egg.a + 3.0
        });
        if far {
            return Some(egg);
        }
    }
    None
}

fn render(rng: &mut ChaCha8Rng, label: ClassLabel, size: usize) -> (Image, Vec<Annotation>) {
    let mut img = background(rng, size);
    let sz = size as f64;
    let scale = sz / 64.0;

    // debris: small irregular grey-green blobs
    for _ in 0..rng.random_range(2..6) {
        let a = rng.random_range(1.5..4.0) * scale;
        let blob = Egg {
            cx: rng.random_range(0.0..sz),
            cy: rng.random_range(0.0..sz),
            a,
            b: a * rng.random_range(0.3..1.0),
            theta: rng.random_range(0.0..PI),
        };
        let c = jitter_color(rng, [0.6, 0.62, 0.52], 0.1);
        paint_ellipse(&mut img, &blob, |_, _, _| c);
    }

    let count = if rng.random_bool(0.25) { 2 } else { 1 };
    let mut eggs: Vec<Egg> = Vec::new();
    for _ in 0..count {
        let (a, b) = class_shape(rng, label);
        if let Some(egg) = place(rng, sz, a * scale, b * scale, &eggs) {
            eggs.push(egg);
        }
    }
    let mut anns = Vec::new();
    for egg in &eggs {
        let base = jitter_color(rng, class_base(label), 0.05);
        paint_ellipse(&mut img, egg, |u, v, r| egg_color(label, base, u, v, r));
        let bbox = egg.bbox().clip(sz, sz).expect("eggs are placed inside the frame");
        anns.push(Annotation::new(label, bbox));
    }
    (img, anns)
}

/// `n` square images of side `size`; image `i` holds one or two eggs of
/// class `i mod 5`. Fully determined by `(n, size, seed)`.
pub fn generate_toy_corpus(n: usize, size: usize, seed: u64) -> ToyCorpus {
    let mut records = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("toy_{i:05}");
        let label = ClassLabel::ALL[i % ClassLabel::COUNT];
        let mut rng = rng_for(seed, &["toy-corpus", &id]);
        let (img, annotations) = render(&mut rng, label, size);
        records.push(ImageRecord {
            path: format!("images/{id}.png"),
            id,
            width: size as u32,
            height: size as u32,
            device: Some("synthetic".into()),
            annotations,
        });
        images.push(img);
    }
    let manifest = DatasetManifest::new(records, "").expect("generated records are valid");
    ToyCorpus { manifest, images }
}
