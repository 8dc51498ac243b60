//! Procedural scribble masks grouped by occluded area.
//!
//! A mask is a union of pen strokes: smoothed random walks stamped with a
//! disc of the stroke width. Strokes are laid down until a coverage target
//! drawn inside the bucket is reached; attempts that land outside the
//! bucket are discarded and resampled.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, GrayImage, Mask};
use crate::data::dataset::mix_seed;

/// Smallest side accepted by [`synth_mask`].
pub const MIN_MASK_SIDE: usize = 32;

/// Occlusion stratum: coverage in `(5k %, 5(k+1) %]`, `k = 0..5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bucket(u8);

impl Bucket {
    pub const ALL: [Bucket; 5] = [Bucket(0), Bucket(1), Bucket(2), Bucket(3), Bucket(4)];

    pub fn new(index: usize) -> Option<Self> {
        (index < 5).then_some(Bucket(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// `(lo, hi)`; membership is `lo < coverage <= hi`.
    pub fn interval(self) -> (f64, f64) {
        let k = f64::from(self.0);
        (0.05 * k, 0.05 * (k + 1.0))
    }

    pub fn contains(self, coverage: f64) -> bool {
        let (lo, hi) = self.interval();
        coverage > lo && coverage <= hi
    }

    pub fn from_coverage(coverage: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.contains(coverage))
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}%", 5 * self.0, 5 * (self.0 + 1))
    }
}

impl FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.to_string() == s)
            .ok_or_else(|| format!("unknown bucket `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }

    /// Rotates counter-clockwise.
    pub fn apply(self, m: &Mask) -> Mask {
        let (w, h) = (m.width(), m.height());
        let (ow, oh) = if self.swaps_axes() { (h, w) } else { (w, h) };
        let mut out = Mask::empty(ow, oh);
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = match self {
                    Rotation::R0 => (x, y),
                    Rotation::R90 => (y, w - 1 - x),
                    Rotation::R180 => (w - 1 - x, h - 1 - y),
                    Rotation::R270 => (h - 1 - y, x),
                };
                out.set(nx, ny, m.get(x, y));
            }
        }
        out
    }
}

/// Parameters of one scribble mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    /// Accepted coverage `(lo, hi]`.
    pub coverage: (f64, f64),
    /// Pen diameter in pixels.
    pub stroke_width: f64,
    pub max_strokes: usize,
    /// Maximum walk length of a single stroke, in steps.
    pub stroke_steps: usize,
    /// Standard deviation of the per-step change in turning rate (radians).
    pub turn_std: f64,
    pub rotation: Rotation,
    pub seed: u64,
    pub max_attempts: usize,
}

impl MaskSpec {
    /// Handwriting-like defaults: 10 px pen, gentle curvature.
    pub fn for_bucket(bucket: Bucket, seed: u64) -> Self {
        Self {
            coverage: bucket.interval(),
            stroke_width: 10.0,
            max_strokes: 64,
            stroke_steps: 120,
            turn_std: 0.08,
            rotation: Rotation::R0,
            seed,
            max_attempts: 50,
        }
    }
}

/// Stamps a disc, returning the number of newly covered pixels.
fn stamp(mask: &mut Mask, cx: f64, cy: f64, radius: f64) -> usize {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let x0 = (cx - radius).floor().max(0.0) as usize;
    let x1 = ((cx + radius).ceil().min(w - 1.0)).max(0.0) as usize;
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let y1 = ((cy + radius).ceil().min(h - 1.0)).max(0.0) as usize;
    let r2 = radius * radius;
    let mut added = 0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 && !mask.get(x, y) {
                mask.set(x, y, true);
                added += 1;
            }
        }
    }
    added
}

fn draw_strokes(spec: &MaskSpec, w: usize, h: usize, target: usize, rng: &mut ChaCha8Rng) -> Mask {
    let mut mask = Mask::empty(w, h);
    let radius = 0.5 * spec.stroke_width;
    let step = (spec.stroke_width / 3.0).max(1.0);
    let turn = Normal::new(0.0, spec.turn_std.max(0.0)).expect("finite std");
    let mut covered = 0;
    'strokes: for _ in 0..spec.max_strokes {
        let mut x = rng.random_range(0.0..w as f64);
        let mut y = rng.random_range(0.0..h as f64);
        let mut heading = rng.random_range(0.0..2.0 * PI);
        let mut omega = 0.0;
        for _ in 0..spec.stroke_steps {
            covered += stamp(&mut mask, x, y, radius);
            if covered >= target {
                break 'strokes;
            }
            omega = 0.9 * omega + turn.sample(rng);
            heading += omega;
            x += step * heading.cos();
            y += step * heading.sin();
            if x < 0.0 || x >= w as f64 {
                x = x.clamp(0.0, w as f64 - 1e-9);
                heading = PI - heading;
            }
            if y < 0.0 || y >= h as f64 {
                y = y.clamp(0.0, h as f64 - 1e-9);
                heading = -heading;
            }
        }
    }
    mask
}

/// Draws a mask of size `width × height` whose coverage lies in
/// `spec.coverage`. Deterministic in `spec.seed`.
pub fn synth_mask(spec: &MaskSpec, width: usize, height: usize) -> Result<Mask, DataError> {
    if width < MIN_MASK_SIDE || height < MIN_MASK_SIDE {
        return Err(DataError::TooSmall { width, height, min: MIN_MASK_SIDE });
    }
    let (lo, hi) = spec.coverage;
    // Strokes are drawn before rotation, on the transposed grid if needed.
    let (gw, gh) = if spec.rotation.swaps_axes() { (height, width) } else { (width, height) };
    let total = (gw * gh) as f64;
    for attempt in 0..spec.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, attempt as u64));
        let frac = rng.random_range(0.1..0.9);
        let target = ((lo + frac * (hi - lo)) * total).ceil().max(1.0) as usize;
        let mask = spec.rotation.apply(&draw_strokes(spec, gw, gh, target, &mut rng));
        let cov = mask.coverage();
        if cov > lo && cov <= hi {
            return Ok(mask);
        }
    }
    Err(DataError::CoverageUnreachable { lo, hi, attempts: spec.max_attempts })
}

/// Sets occluded pixels to `fill`, copies the rest.
pub fn corrupt(clean: &GrayImage, mask: &Mask, fill: f64) -> Result<GrayImage, DataError> {
    if (clean.width(), clean.height()) != (mask.width(), mask.height()) {
        return Err(DataError::SizeMismatch(clean.width(), clean.height(), mask.width(), mask.height()));
    }
    let pixels = clean
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { fill } else { v })
        .collect();
    Ok(GrayImage::new(clean.width(), clean.height(), pixels))
}
