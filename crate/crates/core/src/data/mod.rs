//! Images, masks, datasets and image quality metrics.

mod dataset;
mod mask;
mod metrics;
mod pgm;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

pub use dataset::{
    load_manifest, make_dataset, synth_texture, write_dataset, Dataset, DatasetSpec, ImageSource, Sample,
    Split, MANIFEST_HEADER,
};
pub use mask::{corrupt, synth_mask, Bucket, MaskSpec, Rotation, MIN_MASK_SIDE};
pub use metrics::{l1, mse, psnr, psnr_from_mse, ssim, ImageMetrics, PSNR_CAP, SSIM_WINDOW};
pub(crate) use dataset::mix_seed;
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("image {width}x{height} is smaller than the minimum {min}x{min}")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("no mask with coverage in ({lo}, {hi}] after {attempts} attempts")]
    CoverageUnreachable { lo: f64, hi: f64, attempts: usize },
    #[error("need {needed} source images, found {available}")]
    InsufficientImages { needed: usize, available: usize },
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Single-channel image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count does not match size");
        Self { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &GrayImage) -> Result<(), DataError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(DataError::SizeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// `1 × 1 × H × W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.pixels.clone()).expect("shape")
    }

    /// Takes channel `c` of batch item `n`.
    pub fn from_tensor(t: &Tensor, n: usize, c: usize) -> Self {
        let [_, _, h, w] = t.shape();
        let item = t.item(n);
        Self::new(w, h, item[c * h * w..(c + 1) * h * w].to_vec())
    }

    pub fn clamped(&self) -> Self {
        Self::new(self.width, self.height, self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Affinely maps the value range onto `[0, 1]` (constant images become 0).
    pub fn min_max_normalized(&self) -> Self {
        let lo = self.pixels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels = self
            .pixels
            .iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect();
        Self::new(self.width, self.height, pixels)
    }

    /// Rounds every value to the nearest multiple of 1/255, so 8-bit
    /// storage is lossless.
    pub fn quantized(&self) -> Self {
        let pixels = self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
        Self::new(self.width, self.height, pixels)
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscaled(&self, factor: usize) -> Self {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(self.get(x / factor, y / factor));
            }
        }
        Self::new(w, h, out)
    }
}

/// Boolean occlusion mask; `true` marks a corrupted pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height);
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of occluded pixels.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    /// Black/white image (occluded = 1).
    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(self.width, self.height, self.bits.iter().map(|&b| f64::from(u8::from(b))).collect())
    }

    /// Thresholds an image at one half.
    pub fn from_image(img: &GrayImage) -> Self {
        Self::from_bits(img.width(), img.height(), img.pixels().iter().map(|&v| v >= 0.5).collect())
    }
}
