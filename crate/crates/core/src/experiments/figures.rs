use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::runner::{write_atomic, Experiment};
use super::views::Role;
use crate::dataset::ClassLabel;
use crate::degrade::Image;
use crate::detect::RawDetection;
use crate::domain::DomainVariant;
use crate::error::{Error, Result};
use crate::postprocess::BoundingBox;

/// Outline colour per class.
pub fn class_color(label: ClassLabel) -> [u8; 3] {
    match label {
        ClassLabel::AL => [230, 40, 40],
        ClassLabel::HW => [40, 200, 60],
        ClassLabel::OV => [40, 90, 240],
        ClassLabel::TS => [250, 200, 0],
        ClassLabel::Tri => [220, 40, 220],
    }
}

const GAP: u32 = 4;
const MIN_PANEL: usize = 192;

/// A detection as drawn: `rect` is the inclusive outline
/// `[x0, y0, x1, y1]` in figure pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawnBox {
    pub label: ClassLabel,
    pub score: f64,
    pub bbox: BoundingBox,
    pub rect: [u32; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub name: String,
    pub variant: DomainVariant,
    /// Top-left corner of the sub-image in the figure.
    pub origin: [u32; 2],
    pub boxes: Vec<DrawnBox>,
}

/// Sidecar written next to each figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureMeta {
    pub image_id: String,
    pub fold: usize,
    pub detector_domain: DomainVariant,
    /// Integer upscaling from image to figure pixels.
    pub scale: u32,
    pub panels: Vec<PanelMeta>,
}

/// 3×5 bitmaps for the characters of a score label.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0, 0, 0, 0, 0b010],
        _ => [0; 5],
    }
}

fn put(canvas: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < canvas.width() && (y as u32) < canvas.height() {
        canvas.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn draw_text(canvas: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..3 {
                if bits >> (2 - dx) & 1 == 1 {
                    put(canvas, x + i as i64 * 4 + dx, y + dy as i64, color);
                }
            }
        }
    }
}

fn draw_rect(canvas: &mut RgbImage, [x0, y0, x1, y1]: [u32; 4], color: [u8; 3]) {
    for x in x0..=x1 {
        put(canvas, x as i64, y0 as i64, color);
        put(canvas, x as i64, y1 as i64, color);
    }
    for y in y0..=y1 {
        put(canvas, x0 as i64, y as i64, color);
        put(canvas, x1 as i64, y as i64, color);
    }
}

/// Outline of `b` after scaling by `scale` and shifting to `origin`,
/// kept inside the `w × h` image's footprint.
fn rect_for(b: &BoundingBox, scale: u32, origin: [u32; 2], (w, h): (usize, usize)) -> [u32; 4] {
    let s = scale as f64;
    let max_x = (w as u32 * scale - 1) as f64;
    let max_y = (h as u32 * scale - 1) as f64;
    let x0 = (b.xmin * s).floor().clamp(0.0, max_x) as u32;
    let y0 = (b.ymin * s).floor().clamp(0.0, max_y) as u32;
    let x1 = ((b.xmax * s).ceil() - 1.0).clamp(x0 as f64, max_x) as u32;
    let y1 = ((b.ymax * s).ceil() - 1.0).clamp(y0 as f64, max_y) as u32;
    [origin[0] + x0, origin[1] + y0, origin[0] + x1, origin[1] + y1]
}

/// Lays out four equally sized views in a 2×2 grid, draws each panel's
/// detections (outline plus score) and returns the figure and sidecar
/// panels. Scores are drawn first so outlines always keep their colour.
pub fn compose_panel(panels: &[(&str, DomainVariant, &Image, &[RawDetection]); 4]) -> (RgbImage, u32, Vec<PanelMeta>) {
    let (w, h) = panels[0].2.dims();
    let scale = MIN_PANEL.div_ceil(w.max(h)).max(1) as u32;
    let (pw, ph) = (w as u32 * scale, h as u32 * scale);
    let mut canvas = RgbImage::from_pixel(2 * pw + GAP, 2 * ph + GAP, Rgb([255, 255, 255]));
    let mut metas = Vec::new();
    for (i, (name, variant, img, dets)) in panels.iter().enumerate() {
        let origin = [(i as u32 % 2) * (pw + GAP), (i as u32 / 2) * (ph + GAP)];
        let rgb = if img.dims() == (w, h) { img.to_rgb8() } else { img.resize_bilinear(w, h).to_rgb8() };
        for y in 0..ph {
            for x in 0..pw {
                canvas.put_pixel(origin[0] + x, origin[1] + y, *rgb.get_pixel(x / scale, y / scale));
            }
        }
        let boxes: Vec<DrawnBox> = dets
            .iter()
            .map(|d| DrawnBox {
                label: d.label,
                score: d.score,
                bbox: d.bbox,
                rect: rect_for(&d.bbox, scale, origin, (w, h)),
            })
            .collect();
        for b in &boxes {
            let y = (b.rect[1] as i64 - 7).max(origin[1] as i64);
            draw_text(&mut canvas, b.rect[0] as i64 + 1, y, &format!("{:.2}", b.score), class_color(b.label));
        }
        for b in &boxes {
            draw_rect(&mut canvas, b.rect, class_color(b.label));
        }
        metas.push(PanelMeta {
            name: (*name).to_owned(),
            variant: *variant,
            origin,
            boxes,
        });
    }
    (canvas, scale, metas)
}

fn enhanced_variant(exp: &Experiment) -> Result<DomainVariant> {
    let cfg = exp.config();
    if cfg.pix2pix.is_some() {
        Ok(DomainVariant::EnhancedPix2Pix)
    } else if cfg.cyclegan.is_some() {
        Ok(DomainVariant::EnhancedCycleGan)
    } else {
        Err(Error::MissingModel("Enhanced".into()))
    }
}

/// Writes `<id>.png` and `<id>.json` under `dir` for every id: the image
/// as Original, Grayscale, Degraded and Enhanced, each with the detections
/// of the Original-trained detector from the fold that holds the image out.
pub fn emit_figures(exp: &mut Experiment, ids: &[String], dir: &Path) -> Result<Vec<PathBuf>> {
    let enhanced = enhanced_variant(exp)?;
    let mut written = Vec::new();
    for id in ids {
        let fold = exp.folds().fold_of(id).ok_or_else(|| Error::UnknownImage(id.clone()))?;
        let detector = exp.detector(DomainVariant::Original, fold)?;
        let variants = [
            ("Original", DomainVariant::Original),
            ("Grayscale", DomainVariant::Grayscale),
            ("Degraded", DomainVariant::LowQuality),
            ("Enhanced", enhanced),
        ];
        let mut views = Vec::new();
        for (_, v) in variants {
            let img = exp.view(&[id.as_str()], v, Role::Test, fold)?.remove(0);
            let dets = exp.evaluate_view(&detector, &[id.as_str()], std::slice::from_ref(&img)).detections.remove(0);
            views.push((img, dets));
        }
        let panels: [(&str, DomainVariant, &Image, &[RawDetection]); 4] =
            std::array::from_fn(|i| (variants[i].0, variants[i].1, &views[i].0, views[i].1.as_slice()));
        let (canvas, scale, metas) = compose_panel(&panels);
        let png = dir.join(format!("{id}.png"));
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        canvas.save(&png).map_err(|source| Error::Image {
            path: png.clone(),
            source,
        })?;
        let meta = FigureMeta {
            image_id: id.clone(),
            fold,
            detector_domain: DomainVariant::Original,
            scale,
            panels: metas,
        };
        write_atomic(
            &dir.join(format!("{id}.json")),
            serde_json::to_string_pretty(&meta).expect("sidecar serialises").as_bytes(),
        )?;
        written.push(png);
    }
    Ok(written)
}

/// Held-out images where every egg is found in the Original view, at
/// least one is missed in the degraded view, and all are found again
/// after enhancement. Sorted by id, at most `limit`.
pub fn restoration_examples(exp: &mut Experiment, limit: usize) -> Result<Vec<String>> {
    let enhanced = enhanced_variant(exp)?;
    let mut found = Vec::new();
    for fold in 0..exp.folds().k {
        let detector = exp.detector(DomainVariant::Original, fold)?;
        let ids: Vec<String> = exp.folds().test_ids(fold).into_iter().map(str::to_owned).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let mut outcomes = Vec::new();
        for v in [DomainVariant::Original, DomainVariant::LowQuality, enhanced] {
            let imgs = exp.view(&refs, v, Role::Test, fold)?;
            outcomes.push(exp.evaluate_view(&detector, &refs, &imgs));
        }
        for (i, id) in ids.iter().enumerate() {
            let [o, l, e] = [0, 1, 2].map(|k| outcomes[k].matches[i].pooled());
            let complete = |c: &crate::postprocess::ClassCounts| c.fn_ == 0 && c.tp > 0;
            if complete(&o) && !complete(&l) && complete(&e) {
                found.push(id.clone());
            }
        }
    }
    found.sort();
    found.truncate(limit);
    Ok(found)
}
