use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Shape, Tensor};

/// RGB image with interleaved `f32` intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert_eq!(data.len(), width * height * 3);
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Image {
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(3) {
            let v = f([px[0], px[1], px[2]]);
            px.copy_from_slice(&v);
        }
        out
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Mean absolute per-channel difference.
    pub fn l1_distance(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims(), "l1 distance needs equal dimensions");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        sum / self.data.len() as f64
    }

    /// Bilinear sample at continuous coordinates (pixel centres at `i + 0.5`)
    /// with edge replication.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f32);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f32);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let (p00, p10, p01, p11) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        std::array::from_fn(|c| {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bot = p01[c] + (p11[c] - p01[c]) * tx;
            top + (bot - top) * ty
        })
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Image::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f32 + 0.5) * sx, (y as f32 + 0.5) * sy)
        })
    }

    /// Copies a window; parts outside the image replicate the nearest edge.
    pub fn crop_replicate(&self, x0: isize, y0: isize, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |x, y| {
            let sx = (x0 + x as isize).clamp(0, self.width as isize - 1) as usize;
            let sy = (y0 + y as isize).clamp(0, self.height as isize - 1) as usize;
            self.pixel(sx, sy)
        })
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image::from_vec(img.width() as usize, img.height() as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer matches dimensions")
    }
}

/// Packs equally sized images into a `[3, n, h, w]` tensor, applying
/// `f` to every value.
pub fn images_to_tensor(images: &[&Image], f: impl Fn(f32) -> f32) -> Tensor {
    let (w, h) = images[0].dims();
    let n = images.len();
    let mut t = Tensor::zeros(Shape::new(3, n, h, w));
    let td = t.data_mut();
    for (i, img) in images.iter().enumerate() {
        assert_eq!(img.dims(), (w, h), "batched images must share dimensions");
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                td[(c * n + i) * h * w + p] = f(px[c]);
            }
        }
    }
    t
}

/// Inverse of [`images_to_tensor`] for 3-channel tensors.
pub fn tensor_to_images(t: &Tensor) -> Vec<Image> {
    let s = t.shape();
    assert_eq!(s.c, 3);
    let hw = s.h * s.w;
    (0..s.n)
        .map(|i| {
            let mut data = vec![0.0; hw * 3];
            for p in 0..hw {
                for c in 0..3 {
                    data[p * 3 + c] = t.data()[(c * s.n + i) * hw + p];
                }
            }
            Image::from_vec(s.w, s.h, data)
        })
        .collect()
}
