use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::affine::{affine_augment, AffineSampler};
use super::image::Image;
use super::ops::{brightness_contrast, color_jitter, motion_blur};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

/// One concrete degradation recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub blur_length: u32,
    pub blur_angle: f32,
    pub hue_shift: f32,
    pub saturation_factor: f32,
    pub brightness_delta: f32,
    pub contrast_factor: f32,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn identity() -> Self {
        Self {
            blur_length: 1,
            blur_angle: 0.0,
            hue_shift: 0.0,
            saturation_factor: 1.0,
            brightness_delta: 0.0,
            contrast_factor: 1.0,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.blur_length <= 1
            && self.hue_shift == 0.0
            && self.saturation_factor == 1.0
            && self.brightness_delta == 0.0
            && self.contrast_factor == 1.0
    }

    pub fn within(&self, r: &DegradationRanges) -> bool {
        let inside = |v: f32, [lo, hi]: [f64; 2]| (lo..=hi).contains(&(v as f64));
        (r.blur_length[0]..=r.blur_length[1]).contains(&self.blur_length)
            && inside(self.blur_angle, r.blur_angle)
            && inside(self.hue_shift, r.hue_shift)
            && inside(self.saturation_factor, r.saturation_factor)
            && inside(self.brightness_delta, r.brightness_delta)
            && inside(self.contrast_factor, r.contrast_factor)
    }
}

/// Inclusive `[min, max]` range for each degradation parameter. The blur
/// angle is drawn from `[min, max)` when the range is not a single point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRanges {
    pub blur_length: [u32; 2],
    pub blur_angle: [f64; 2],
    pub hue_shift: [f64; 2],
    pub saturation_factor: [f64; 2],
    pub brightness_delta: [f64; 2],
    pub contrast_factor: [f64; 2],
}

impl DegradationRanges {
    /// Outer limits any configured range must stay inside.
    pub const LIMITS: DegradationRanges = DegradationRanges {
        blur_length: [1, 15],
        blur_angle: [0.0, 180.0],
        hue_shift: [-0.1, 0.1],
        saturation_factor: [0.5, 1.5],
        brightness_delta: [-0.3, 0.3],
        contrast_factor: [0.5, 1.5],
    };

    /// Narrower ranges used to synthesise training pairs.
    pub fn train_default() -> Self {
        Self {
            blur_length: [3, 7],
            blur_angle: [0.0, 180.0],
            hue_shift: [-0.05, 0.05],
            saturation_factor: [0.7, 1.3],
            brightness_delta: [-0.15, 0.15],
            contrast_factor: [0.7, 1.3],
        }
    }

    /// Wider ranges for the held-out "Low Quality" test domain.
    pub fn test_default() -> Self {
        Self {
            blur_length: [1, 9],
            ..Self::LIMITS
        }
    }

    /// A single point: every draw returns `spec`'s parameters.
    pub fn point(spec: &DegradationSpec) -> Self {
        let p = |v: f32| [v as f64; 2];
        Self {
            blur_length: [spec.blur_length; 2],
            blur_angle: p(spec.blur_angle),
            hue_shift: p(spec.hue_shift),
            saturation_factor: p(spec.saturation_factor),
            brightness_delta: p(spec.brightness_delta),
            contrast_factor: p(spec.contrast_factor),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = Self::LIMITS;
        let bad = |name: &str| Err(Error::InvalidConfig(format!("degradation range `{name}` is empty or outside its limits")));
        let [lo, hi] = self.blur_length;
        if lo > hi || lo < l.blur_length[0] || hi > l.blur_length[1] {
            return bad("blur_length");
        }
        let floats = [
            ("blur_angle", self.blur_angle, l.blur_angle),
            ("hue_shift", self.hue_shift, l.hue_shift),
            ("saturation_factor", self.saturation_factor, l.saturation_factor),
            ("brightness_delta", self.brightness_delta, l.brightness_delta),
            ("contrast_factor", self.contrast_factor, l.contrast_factor),
        ];
        for (name, [lo, hi], [llo, lhi]) in floats {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < llo || hi > lhi {
                return bad(name);
            }
        }
        if self.blur_angle[0] == 180.0 {
            return bad("blur_angle");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        r.validate()?;
        Ok(r)
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2], half_open: bool) -> f64 {
    if lo >= hi {
        lo
    } else if half_open {
        rng.random_range(lo..hi)
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws every parameter uniformly from its range using a stream derived
/// from `seed`.
pub fn sample_spec(seed: u64, ranges: &DegradationRanges) -> DegradationSpec {
    let mut rng = rng_for(seed, &["degradation-spec"]);
    let [blo, bhi] = ranges.blur_length;
    DegradationSpec {
        blur_length: if blo >= bhi { blo } else { rng.random_range(blo..=bhi) },
        blur_angle: uniform(&mut rng, ranges.blur_angle, true) as f32,
        hue_shift: uniform(&mut rng, ranges.hue_shift, false) as f32,
        saturation_factor: uniform(&mut rng, ranges.saturation_factor, false) as f32,
        brightness_delta: uniform(&mut rng, ranges.brightness_delta, false) as f32,
        contrast_factor: uniform(&mut rng, ranges.contrast_factor, false) as f32,
        seed,
    }
}

/// Colour jitter, then brightness/contrast, then motion blur.
pub fn apply_spec(img: &Image, spec: &DegradationSpec) -> Image {
    let out = color_jitter(img, spec.hue_shift, spec.saturation_factor);
    let out = brightness_contrast(&out, spec.brightness_delta, spec.contrast_factor);
    motion_blur(&out, spec.blur_length, spec.blur_angle)
}

/// Settings for synthesising (degraded, clean) training pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub ranges: DegradationRanges,
    /// Geometric augmentation shared by both halves of the pair.
    #[serde(default)]
    pub affine: Option<AffineSampler>,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            ranges: DegradationRanges::train_default(),
            affine: None,
        }
    }
}

/// Returns `(degraded, clean)`. Without augmentation `clean` is `img`.
pub fn make_paired_sample(img: &Image, seed: u64, config: &PairConfig) -> (Image, Image) {
    let clean = match &config.affine {
        Some(sampler) => {
            let spec = sampler.sample(&mut rng_for(seed, &["pair-affine"]));
            affine_augment(img, &[], &spec).0
        }
        None => img.clone(),
    };
    let degraded = apply_spec(&clean, &sample_spec(seed, &config.ranges));
    (degraded, clean)
}

/// Seed for one image within a named stream.
pub fn image_seed(seed: u64, stream: &str, id: &str) -> u64 {
    derive_seed(seed, &[stream, id])
}

/// Degrades every `(id, image)` with its own derived seed. The result does
/// not depend on `parallel`.
pub fn degrade_corpus(
    images: &[(String, Image)],
    ranges: &DegradationRanges,
    seed: u64,
    stream: &str,
    parallel: bool,
) -> Vec<(DegradationSpec, Image)> {
    let one = |(id, img): &(String, Image)| {
        let spec = sample_spec(image_seed(seed, stream, id), ranges);
        (spec, apply_spec(img, &spec))
    };
    if parallel {
        images.par_iter().map(one).collect()
    } else {
        images.iter().map(one).collect()
    }
}
