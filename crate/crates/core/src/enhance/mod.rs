//! GAN image enhancement: an encoder-decoder generator trained either on
//! aligned (degraded, clean) pairs against a patch discriminator with an
//! L1 term, or on two unaligned collections with cycle consistency.

mod net;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Kind};
use crate::degrade::{images_to_tensor, tensor_to_images, Image};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, ParamStore, Tape};
use crate::seed::rng_for;
use net::Generator;

pub use train::{train_paired, train_unpaired};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Side of the square training/inference window; a power of two.
    pub input_size: usize,
    /// Number of stride-2 encoder blocks (mirrored by the decoder).
    pub depth: usize,
    pub base_channels: usize,
    pub skip_connections: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            depth: 3,
            base_channels: 16,
            skip_connections: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.input_size.is_power_of_two() || self.input_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "generator input_size {} is not a power of two",
                self.input_size
            )));
        }
        if self.depth == 0 || self.depth >= usize::BITS as usize || self.input_size % (1 << self.depth) != 0 {
            return Err(Error::InvalidConfig(format!(
                "generator input_size {} is not divisible by 2^{}",
                self.input_size, self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("generator base_channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub adversarial_weight: f32,
    pub reconstruction_weight: f32,
    /// Unpaired mode only.
    pub cycle_weight: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adversarial_weight: 1.0,
            reconstruction_weight: 100.0,
            cycle_weight: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.adversarial_weight, self.reconstruction_weight, self.cycle_weight];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Optimiser and discriminator settings for enhancer training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub discriminator_channels: usize,
    pub discriminator_depth: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            optimizer: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                ..AdamConfig::default()
            },
            discriminator_channels: 16,
            discriminator_depth: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancerMode {
    Paired,
    Unpaired,
}

/// Mean losses over one epoch. `reconstruction` is the L1 term in paired
/// mode and the cycle-consistency term in unpaired mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub generator: f64,
    pub discriminator: f64,
    pub reconstruction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub mode: Option<EnhancerMode>,
    pub epochs: usize,
    pub seed: u64,
    pub history: Vec<EpochLoss>,
}

#[derive(Serialize, Deserialize)]
struct EnhancerFileMeta {
    config: GeneratorConfig,
    init_seed: u64,
    training: TrainingMeta,
}

/// A generator and its training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerModel {
    config: GeneratorConfig,
    init_seed: u64,
    net: Generator,
    params: ParamStore,
    meta: TrainingMeta,
}

/// Fresh generator with weights drawn from a stream keyed on `seed`.
pub fn build_enhancer(cfg: &GeneratorConfig, seed: u64) -> Result<EnhancerModel> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let mut rng = rng_for(seed, &["enhancer-init"]);
    let net = Generator::new(cfg, "g", &mut params, &mut rng);
    Ok(EnhancerModel {
        config: *cfg,
        init_seed: seed,
        net,
        params,
        meta: TrainingMeta::default(),
    })
}

/// Window origins covering `len` with stride `size / 2`, last one flush
/// with the end.
fn tile_origins(len: usize, size: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let step = (size / 2).max(1);
    let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&p| p + size < len).collect();
    v.push(len - size);
    v
}

const TILE_BATCH: usize = 16;

impl EnhancerModel {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Enhances same-sized `input_size` squares in one batch.
    fn run_windows(&self, windows: &[&Image]) -> Vec<Image> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(TILE_BATCH) {
            let x = images_to_tensor(chunk, |v| v);
            let mut tape = Tape::new();
            let y = self.net.forward(&mut tape, &self.params, &x);
            out.extend(tensor_to_images(tape.value(y)));
        }
        out
    }

    /// Enhances an image of any size. Images other than `input_size`
    /// squares are processed as half-overlapping windows (edge-replicated
    /// where they overhang) blended with tent weights.
    pub fn enhance(&self, img: &Image) -> Image {
        self.enhance_batch(&[img]).pop().expect("one output per input")
    }

    pub fn enhance_batch(&self, images: &[&Image]) -> Vec<Image> {
        let s = self.config.input_size;
        if images.iter().all(|i| i.dims() == (s, s)) {
            return self.run_windows(images);
        }
        images.iter().map(|img| self.enhance_tiled(img)).collect()
    }

    fn enhance_tiled(&self, img: &Image) -> Image {
        let s = self.config.input_size;
        let (w, h) = img.dims();
        let xs = tile_origins(w, s);
        let ys = tile_origins(h, s);
        let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let windows: Vec<Image> = origins
            .iter()
            .map(|&(x, y)| img.crop_replicate(x as isize, y as isize, s, s))
            .collect();
        let outs = self.run_windows(&windows.iter().collect::<Vec<_>>());
        let tent: Vec<f32> = (0..s).map(|i| (i + 1).min(s - i) as f32).collect();
        let mut acc = vec![0.0f32; w * h * 3];
        let mut wsum = vec![0.0f32; w * h];
        for (&(ox, oy), tile) in origins.iter().zip(&outs) {
            for ty in 0..s.min(h - oy) {
                for tx in 0..s.min(w - ox) {
                    let wt = tent[tx] * tent[ty];
                    let (x, y) = (ox + tx, oy + ty);
                    let px = tile.pixel(tx, ty);
                    let i = y * w + x;
                    for c in 0..3 {
                        acc[i * 3 + c] += wt * px[c];
                    }
                    wsum[i] += wt;
                }
            }
        }
        for (i, px) in acc.chunks_exact_mut(3).enumerate() {
            for v in px {
                *v = (*v / wsum[i]).clamp(0.0, 1.0);
            }
        }
        Image::from_vec(w, h, acc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = EnhancerFileMeta {
            config: self.config,
            init_seed: self.init_seed,
            training: self.meta.clone(),
        };
        checkpoint::save(path, Kind::Enhancer, &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, stored): (EnhancerFileMeta, _) = checkpoint::load(path, Kind::Enhancer)?;
        let mut model = build_enhancer(&meta.config, meta.init_seed).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        checkpoint::restore_params(&mut model.params, &stored, path)?;
        model.meta = meta.training;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn test_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            [(x as f32 / w as f32), (y as f32 / h as f32), ((x * y) % 7) as f32 / 7.0]
        })
    }

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            input_size: 16,
            depth: 2,
            base_channels: 4,
            skip_connections: true,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let img = test_image(16, 16);
        let a = build_enhancer(&tiny(), 3).unwrap();
        let b = build_enhancer(&tiny(), 3).unwrap();
        assert_eq!(a.enhance(&img), b.enhance(&img));
        let c = build_enhancer(&tiny(), 4).unwrap();
        assert_ne!(a.enhance(&img), c.enhance(&img));
    }

    #[test]
    fn untrained_output_contract() {
        let m = build_enhancer(&tiny(), 1).unwrap();
        for (w, h) in [(16, 16), (40, 23), (9, 5), (16, 48)] {
            let img = test_image(w, h);
            let out = m.enhance(&img);
            assert_eq!(out.dims(), (w, h));
            let (lo, hi) = out.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
            assert_eq!(out, m.enhance(&img));
        }
    }

    #[test]
    fn invalid_geometry_rejected() {
        for cfg in [
            GeneratorConfig { input_size: 24, ..tiny() },
            GeneratorConfig { depth: 5, ..tiny() },
            GeneratorConfig { depth: 0, ..tiny() },
        ] {
            assert!(matches!(build_enhancer(&cfg, 0), Err(Error::InvalidConfig(_))));
        }
        assert!(build_enhancer(&GeneratorConfig { depth: 4, ..tiny() }, 0).is_ok());
    }

    #[test]
    fn tiles_cover_the_axis() {
        assert_eq!(tile_origins(10, 16), vec![0]);
        assert_eq!(tile_origins(16, 16), vec![0]);
        assert_eq!(tile_origins(40, 16), vec![0, 8, 16, 24]);
        assert_eq!(tile_origins(17, 16), vec![0, 1]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = build_enhancer(&tiny(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ovdt");
        m.save(&p).unwrap();
        let back = EnhancerModel::load(&p).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        let img = test_image(16, 16);
        assert_eq!(back.enhance(&img), m.enhance(&img));
    }

    #[test]
    fn l1_gradients_match_finite_differences() {
        let cfg = GeneratorConfig {
            input_size: 8,
            depth: 1,
            base_channels: 4,
            skip_connections: true,
        };
        let mut m = build_enhancer(&cfg, 11).unwrap();
        let imgs = [test_image(8, 8), test_image(8, 8).map_pixels(|p| p.map(|v| 1.0 - 0.8 * v))];
        let x = images_to_tensor(&imgs.iter().collect::<Vec<_>>(), |v| v);
        let target: Tensor = x.map(|v| (0.9 * v + 0.05).powf(1.3));
        let loss = |m: &EnhancerModel| {
            let mut tape = Tape::new();
            let y = m.net.forward(&mut tape, &m.params, &x);
            let l = tape.l1_loss(y, &target);
            (tape, l)
        };
        let (mut tape, l) = loss(&m);
        tape.backward(l);
        let analytic: Vec<f64> = tape
            .param_grads(&m.params)
            .iter()
            .flat_map(|g| g.data().iter().map(|&v| v as f64).collect::<Vec<_>>())
            .collect();
        let eps = 1e-3f32;
        let mut numeric = Vec::with_capacity(analytic.len());
        for t in 0..m.params.len() {
            for j in 0..m.params.tensors()[t].len() {
                let orig = m.params.tensors()[t].data()[j];
                m.params.tensors_mut()[t].data_mut()[j] = orig + eps;
                let (tp, lp) = loss(&m);
                m.params.tensors_mut()[t].data_mut()[j] = orig - eps;
                let (tm, lm) = loss(&m);
                m.params.tensors_mut()[t].data_mut()[j] = orig;
                numeric.push((tp.value(lp).item() as f64 - tm.value(lm).item() as f64) / (2.0 * eps as f64));
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-3, "relative gradient error {}", diff / norm);
    }
}
