//! Full-reference quality metrics for images with dynamic range 1.

use super::{DataError, GrayImage};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Side of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Per-image quality record.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ImageMetrics {
    pub mse: f64,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl ImageMetrics {
    pub fn compute(reference: &GrayImage, test: &GrayImage) -> Result<Self, DataError> {
        let mse = mse(reference, test)?;
        Ok(Self { mse, l1: l1(reference, test)?, psnr: psnr_from_mse(mse), ssim: ssim(reference, test)? })
    }

    /// Componentwise mean; zero for an empty slice.
    pub fn mean(items: &[ImageMetrics]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let sum = items.iter().fold(Self::default(), |a, m| Self {
            mse: a.mse + m.mse,
            l1: a.l1 + m.l1,
            psnr: a.psnr + m.psnr,
            ssim: a.ssim + m.ssim,
        });
        Self { mse: sum.mse / n, l1: sum.l1 / n, psnr: sum.psnr / n, ssim: sum.ssim / n }
    }
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64, DataError> {
    a.same_size(b)?;
    let s: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.pixels().len() as f64)
}

/// Mean absolute error.
pub fn l1(a: &GrayImage, b: &GrayImage) -> Result<f64, DataError> {
    a.same_size(b)?;
    let s: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.pixels().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64, DataError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering with the SSIM window.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained 11×11 windows.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, DataError> {
    a.same_size(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(DataError::TooSmall { width: w, height: h, min: SSIM_WINDOW });
    }
    let g = gaussian_window();
    let (x, y) = (a.pixels(), b.pixels());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect() };
    let mu_x = filter_valid(x, w, h, &g);
    let mu_y = filter_valid(y, w, h, &g);
    let e_xx = filter_valid(&prod(&|p, _| p * p), w, h, &g);
    let e_yy = filter_valid(&prod(&|_, q| q * q), w, h, &g);
    let e_xy = filter_valid(&prod(&|p, q| p * q), w, h, &g);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}
