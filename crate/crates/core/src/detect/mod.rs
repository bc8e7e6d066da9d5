//! Detector contract and the reference anchor-grid detector.
//!
//! A stride-8 convolutional backbone feeds a dense head that scores every
//! anchor against background plus the five egg classes and regresses its
//! box. Inference returns scored boxes in original image coordinates,
//! before suppression.

mod anchors;
mod net;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Kind};
use crate::dataset::ClassLabel;
use crate::degrade::{images_to_tensor, Image};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, ParamStore, Tape, Tensor};
use crate::postprocess::{detection_order, BoundingBox};
use crate::seed::rng_for;
use anchors::anchor_grid;
use net::{Backbone, Head, STRIDE};

pub use train::train_detector;

/// A scored, labelled box before suppression, in original image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub bbox: BoundingBox,
    pub label: ClassLabel,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Foreground classes; background is added on top.
    pub num_classes: usize,
    /// `"toy"` (plain strided CNN) or `"resnet"` (residual stages).
    pub backbone: String,
    pub pretrained_backbone: bool,
    /// Checkpoint whose `backbone.*` tensors seed the backbone when
    /// `pretrained_backbone` is set.
    pub pretrained_source: Option<PathBuf>,
    pub score_threshold: f64,
    pub max_detections: usize,
    /// Images are resized to this square before the network.
    pub input_size: usize,
    pub base_channels: usize,
    /// Anchor side lengths in network-input pixels.
    pub anchor_sizes: Vec<f64>,
    /// Anchor height/width ratios.
    pub anchor_ratios: Vec<f64>,
    pub positive_iou: f64,
    pub negative_iou: f64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            num_classes: ClassLabel::COUNT,
            backbone: "toy".into(),
            pretrained_backbone: false,
            pretrained_source: None,
            score_threshold: 0.5,
            max_detections: 100,
            input_size: 64,
            base_channels: 16,
            anchor_sizes: vec![10.0, 16.0, 24.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            positive_iou: 0.5,
            negative_iou: 0.4,
            batch_size: 8,
            optimizer: AdamConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !matches!(self.backbone.as_str(), "toy" | "resnet") {
            return Err(Error::UnknownBackbone(self.backbone.clone()));
        }
        if self.num_classes != ClassLabel::COUNT {
            return bad(format!("num_classes must be {}, got {}", ClassLabel::COUNT, self.num_classes));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!("score_threshold {} outside [0, 1]", self.score_threshold));
        }
        if self.max_detections == 0 || self.batch_size == 0 || self.base_channels == 0 {
            return bad("max_detections, batch_size and base_channels must be positive".into());
        }
        if self.input_size == 0 || self.input_size % STRIDE != 0 {
            return bad(format!("input_size must be a positive multiple of {STRIDE}"));
        }
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.anchor_sizes) || !positive(&self.anchor_ratios) {
            return bad("anchor sizes and ratios must be non-empty and positive".into());
        }
        if !(0.0 < self.negative_iou && self.negative_iou <= self.positive_iou && self.positive_iou <= 1.0) {
            return bad("need 0 < negative_iou <= positive_iou <= 1".into());
        }
        if self.pretrained_backbone && self.pretrained_source.is_none() {
            return bad("pretrained_backbone needs a pretrained_source checkpoint".into());
        }
        Ok(())
    }

    fn anchors_per_cell(&self) -> usize {
        self.anchor_sizes.len() * self.anchor_ratios.len()
    }

    /// Output channels of the classification head.
    pub fn head_classes(&self) -> usize {
        self.num_classes + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpochLoss {
    pub classification: f64,
    pub regression: f64,
}

impl DetectorEpochLoss {
    pub fn total(&self) -> f64 {
        self.classification + self.regression
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorMeta {
    pub epochs: usize,
    pub seed: u64,
    /// Image domain the detector was trained on, e.g. `"pix2pix"`.
    pub domain: Option<String>,
    pub history: Vec<DetectorEpochLoss>,
}

#[derive(Serialize, Deserialize)]
struct DetectorFileMeta {
    config: DetectorConfig,
    init_seed: u64,
    training: DetectorMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    config: DetectorConfig,
    init_seed: u64,
    backbone: Backbone,
    head: Head,
    params: ParamStore,
    anchors: Vec<BoundingBox>,
    meta: DetectorMeta,
}

/// Builds a detector. Head weights always come from the seeded stream;
/// the backbone is copied from `pretrained_source` when requested.
pub fn build_detector(cfg: &DetectorConfig, seed: u64) -> Result<DetectorModel> {
    let mut model = build_untrained(cfg, seed)?;
    if cfg.pretrained_backbone {
        let path = cfg.pretrained_source.as_deref().expect("validated");
        let source = checkpoint::read(path)?;
        let names: Vec<String> = model.params.names().to_vec();
        for (i, name) in names.iter().enumerate().filter(|(_, n)| n.starts_with("backbone.")) {
            let id = source.params.find(name).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("no tensor `{name}` for the backbone"),
            })?;
            let t = source.params.get(id);
            if t.shape() != model.params.tensors()[i].shape() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("backbone tensor `{name}` has the wrong shape"),
                });
            }
            model.params.tensors_mut()[i] = t.clone();
        }
    }
    Ok(model)
}

fn build_untrained(cfg: &DetectorConfig, seed: u64) -> Result<DetectorModel> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let residual = cfg.backbone == "resnet";
    let backbone = Backbone::new(
        residual,
        cfg.base_channels,
        &mut params,
        &mut rng_for(seed, &["detector-init", "backbone"]),
    );
    let head = Head::new(
        Backbone::out_channels(cfg.base_channels),
        cfg.anchors_per_cell(),
        cfg.head_classes(),
        &mut params,
        &mut rng_for(seed, &["detector-init", "head"]),
    );
    let f = cfg.input_size / STRIDE;
    let anchors = anchor_grid(f, f, STRIDE as f64, &cfg.anchor_sizes, &cfg.anchor_ratios);
    Ok(DetectorModel {
        config: cfg.clone(),
        init_seed: seed,
        backbone,
        head,
        params,
        anchors,
        meta: DetectorMeta::default(),
    })
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const INFER_BATCH: usize = 16;

impl DetectorModel {
    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn meta(&self) -> &DetectorMeta {
        &self.meta
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn set_domain_tag(&mut self, tag: impl Into<String>) {
        self.meta.domain = Some(tag.into());
    }

    /// Network input tensor for images already at `input_size`.
    fn input_tensor(images: &[&Image]) -> Tensor {
        images_to_tensor(images, |v| 2.0 * v - 1.0)
    }

    fn forward(&self, tape: &mut Tape, x: Tensor) -> (crate::nn::Var, crate::nn::Var) {
        let x = tape.input(x);
        let feat = self.backbone.forward(tape, &self.params, x);
        self.head.forward(tape, &self.params, feat)
    }

    /// Scored boxes with `score >= score_threshold`, clipped to the image,
    /// in canonical order (score descending), at most `max_detections`.
    pub fn infer(&self, img: &Image, score_threshold: f64) -> Vec<RawDetection> {
        self.infer_batch(&[img], score_threshold).pop().expect("one result per image")
    }

    pub fn infer_batch(&self, images: &[&Image], score_threshold: f64) -> Vec<Vec<RawDetection>> {
        let s = self.config.input_size;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_BATCH) {
            let resized: Vec<Image> = chunk.iter().map(|i| i.resize_bilinear(s, s)).collect();
            let mut tape = Tape::new();
            let (cls, reg) = self.forward(&mut tape, Self::input_tensor(&resized.iter().collect::<Vec<_>>()));
            let (cls, reg) = (tape.value(cls), tape.value(reg));
            for (b, img) in chunk.iter().enumerate() {
                out.push(self.decode_one(cls, reg, b, img.dims(), score_threshold));
            }
        }
        out
    }

    fn decode_one(&self, cls: &Tensor, reg: &Tensor, b: usize, (w, h): (usize, usize), thr: f64) -> Vec<RawDetection> {
        let shape = cls.shape();
        let (fh, fw) = (shape.h, shape.w);
        let k = self.config.head_classes();
        let a_count = self.config.anchors_per_cell();
        let s = self.config.input_size as f64;
        let (sx, sy) = (w as f64 / s, h as f64 / s);
        let mut dets = Vec::new();
        for a in 0..a_count {
            for y in 0..fh {
                for x in 0..fw {
                    let logits: Vec<f32> = (0..k).map(|c| cls.data()[cls.index(a * k + c, b, y, x)]).collect();
                    let p = softmax(&logits);
                    let (best, score) = (1..k)
                        .map(|c| (c, p[c]))
                        .fold((1, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
                    if score < thr {
                        continue;
                    }
                    let d: [f64; 4] = std::array::from_fn(|j| reg.data()[reg.index(a * 4 + j, b, y, x)] as f64);
                    let anchor = &self.anchors[(a * fh + y) * fw + x];
                    let bbox = anchors::decode(anchor, d).scale(sx, sy);
                    if let Some(bbox) = bbox.clip(w as f64, h as f64) {
                        dets.push(RawDetection {
                            bbox,
                            label: ClassLabel::from_index(best - 1).expect("foreground class"),
                            score,
                        });
                    }
                }
            }
        }
        dets.sort_by(detection_order);
        dets.truncate(self.config.max_detections);
        dets
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = DetectorFileMeta {
            config: self.config.clone(),
            init_seed: self.init_seed,
            training: self.meta.clone(),
        };
        checkpoint::save(path, Kind::Detector, &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, stored): (DetectorFileMeta, _) = checkpoint::load(path, Kind::Detector)?;
        let mut model = build_untrained(&meta.config, meta.init_seed).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        checkpoint::restore_params(&mut model.params, &stored, path)?;
        model.meta = meta.training;
        Ok(model)
    }
}

/// One row of the detections export format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub label: ClassLabel,
    pub bbox: BoundingBox,
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(image_id: &str, d: &RawDetection) -> Self {
        Self {
            image_id: image_id.to_owned(),
            label: d.label,
            bbox: d.bbox,
            score: d.score,
        }
    }

    pub fn detection(&self) -> RawDetection {
        RawDetection {
            bbox: self.bbox,
            label: self.label,
            score: self.score,
        }
    }
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records).expect("detections serialise");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<DetectionRecord> = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    for r in &records {
        if !r.bbox.is_valid() || !(0.0..=1.0).contains(&r.score) {
            return Err(Error::InvalidRecord {
                id: r.image_id.clone(),
                reason: "detection with an invalid box or score".into(),
            });
        }
    }
    Ok(records)
}
