//! Paired (corrupted, clean) samples stratified by occlusion bucket.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mask::{corrupt, synth_mask, Bucket, MaskSpec, Rotation, MIN_MASK_SIDE};
use super::pgm::{load_pgm, save_pgm};
use super::{DataError, GrayImage, Mask};

pub const MANIFEST_HEADER: [&str; 6] = ["id", "clean_path", "mask_path", "bucket", "coverage", "split"];

/// SplitMix64 finalizer applied to `seed ^ f(index)`.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Synthetic,
    /// Directory of P5 PGMs, consumed in file-name order, each used once.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub train_per_bucket: [usize; 5],
    pub test_per_bucket: [usize; 5],
    pub width: usize,
    pub height: usize,
    pub fill: f64,
    pub seed: u64,
    pub source: ImageSource,
}

impl DatasetSpec {
    pub fn synthetic(train_per_bucket: usize, test_per_bucket: usize, side: usize, seed: u64) -> Self {
        Self {
            train_per_bucket: [train_per_bucket; 5],
            test_per_bucket: [test_per_bucket; 5],
            width: side,
            height: side,
            fill: 1.0,
            seed,
            source: ImageSource::Synthetic,
        }
    }

    pub fn total(&self) -> usize {
        self.train_per_bucket.iter().chain(&self.test_per_bucket).sum()
    }

    /// Pen width: 10 px at 256 px, scaled with the shorter side, at least 3 px.
    pub fn stroke_width(&self) -> f64 {
        (10.0 * self.width.min(self.height) as f64 / 256.0).round().max(3.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub bucket: Bucket,
    pub coverage: f64,
    pub clean: GrayImage,
    pub mask: Mask,
    /// Equals `clean` wherever `mask` is false.
    pub corrupted: GrayImage,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn bucket_histogram(&self, split: Split) -> [usize; 5] {
        let mut h = [0; 5];
        for s in self.split(split) {
            h[s.bucket.index()] += 1;
        }
        h
    }
}

/// Smooth grey-level scene: a linear ramp, Gaussian blobs and hard
/// half-plane edges, mapped into `[0.05, 0.95]` and quantized to 8 bits.
pub fn synth_texture(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = width.max(height) as f64;
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let slope = rng.random_range(-1.0..1.0);
    let (gc, gs) = (theta.cos(), theta.sin());

    let blobs: Vec<[f64; 4]> = (0..rng.random_range(3..9))
        .map(|_| {
            let amp = rng.random_range(0.1..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let sigma = rng.random_range(0.05..0.25) * size;
            [rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64), sigma, amp]
        })
        .collect();
    let edges: Vec<[f64; 4]> = (0..rng.random_range(1..4))
        .map(|_| {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let offset = rng.random_range(0.2..0.8) * size;
            let amp = rng.random_range(0.1..0.35) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            [phi.cos(), phi.sin(), offset, amp]
        })
        .collect();

    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = slope * (fx * gc + fy * gs) / size;
            for &[bx, by, s, a] in &blobs {
                let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            for &[nx, ny, off, a] in &edges {
                if fx * nx + fy * ny > off {
                    v += a;
                }
            }
            px.push(v);
        }
    }
    let norm = GrayImage::new(width, height, px).min_max_normalized();
    GrayImage::new(width, height, norm.pixels().iter().map(|v| 0.05 + 0.9 * v).collect()).quantized()
}

fn list_pgms(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Crops a `width × height` window at a seeded position.
fn crop_to(img: &GrayImage, width: usize, height: usize, seed: u64) -> Result<GrayImage, DataError> {
    if img.width() < width || img.height() < height {
        return Err(DataError::TooSmall { width: img.width(), height: img.height(), min: width.max(height) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.random_range(0..=img.width() - width);
    let y0 = rng.random_range(0..=img.height() - height);
    let mut out = GrayImage::filled(width, height, 0.0);
    for y in 0..height {
        for x in 0..width {
            out.set(x, y, img.get(x0 + x, y0 + y));
        }
    }
    Ok(out)
}

struct Plan {
    index: usize,
    split: Split,
    bucket: Bucket,
}

/// Builds the stratified dataset. Sample `i` depends only on
/// `(spec.seed, i)` and, for directory sources, the `i`-th file.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    if spec.width < MIN_MASK_SIDE || spec.height < MIN_MASK_SIDE {
        return Err(DataError::TooSmall { width: spec.width, height: spec.height, min: MIN_MASK_SIDE });
    }
    let mut plans = Vec::with_capacity(spec.total());
    for (split, counts) in [(Split::Train, &spec.train_per_bucket), (Split::Test, &spec.test_per_bucket)] {
        for (b, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                plans.push(Plan { index: plans.len(), split, bucket: Bucket::ALL[b] });
            }
        }
    }
    let files = match &spec.source {
        ImageSource::Synthetic => Vec::new(),
        ImageSource::Directory(dir) => {
            let files = list_pgms(dir)?;
            if files.len() < plans.len() {
                return Err(DataError::InsufficientImages { needed: plans.len(), available: files.len() });
            }
            files
        }
    };
    let stroke_width = spec.stroke_width();

    let samples: Vec<Sample> = plans
        .par_iter()
        .map(|p| {
            let s = mix_seed(spec.seed, p.index as u64);
            let clean = match &spec.source {
                ImageSource::Synthetic => synth_texture(spec.width, spec.height, mix_seed(s, 1)),
                ImageSource::Directory(_) => crop_to(&load_pgm(&files[p.index])?, spec.width, spec.height, mix_seed(s, 1))?,
            };
            let mask_spec = MaskSpec {
                stroke_width,
                rotation: Rotation::ALL[(mix_seed(s, 3) % 4) as usize],
                ..MaskSpec::for_bucket(p.bucket, mix_seed(s, 2))
            };
            let mask = synth_mask(&mask_spec, spec.width, spec.height)?;
            let corrupted = corrupt(&clean, &mask, spec.fill)?;
            Ok(Sample {
                id: format!("{}_{:05}", p.split, p.index),
                split: p.split,
                bucket: p.bucket,
                coverage: mask.coverage(),
                clean,
                mask,
                corrupted,
            })
        })
        .collect::<Result<_, DataError>>()?;

    let (train, test) = samples.into_iter().partition(|s| s.split == Split::Train);
    Ok(Dataset { train, test })
}

/// Writes `clean/`, `mask/` and `manifest.csv` under `dir`; returns the
/// manifest path. Paths in the manifest are relative to `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir.join("clean"))?;
    fs::create_dir_all(dir.join("mask"))?;
    let manifest = dir.join("manifest.csv");
    let csv_err = |e: csv::Error| DataError::Manifest { path: manifest.clone(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(&manifest).map_err(csv_err)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for s in ds.train.iter().chain(&ds.test) {
        let clean_rel = format!("clean/{}.pgm", s.id);
        let mask_rel = format!("mask/{}.pgm", s.id);
        save_pgm(&s.clean, dir.join(&clean_rel))?;
        save_pgm(&s.mask.to_image(), dir.join(&mask_rel))?;
        let cov = format!("{:.6}", s.coverage);
        w.write_record([s.id.as_str(), &clean_rel, &mask_rel, &s.bucket.to_string(), &cov, &s.split.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(manifest)
}

/// Reads a manifest written by [`write_dataset`]; the corrupted image is
/// regenerated with `fill`, coverage is recomputed from the mask.
pub fn load_manifest(path: &Path, fill: f64) -> Result<Dataset, DataError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |msg: String| DataError::Manifest { path: path.to_path_buf(), msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut ds = Dataset::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = |msg: String| bad(format!("row {}: {msg}", line + 1));
        let clean = load_pgm(base.join(&rec[1]))?;
        let mask = Mask::from_image(&load_pgm(base.join(&rec[2]))?);
        let bucket: Bucket = rec[3].parse().map_err(row)?;
        let split: Split = rec[5].parse().map_err(row)?;
        let stated: f64 = rec[4].parse().map_err(|e| row(format!("coverage: {e}")))?;
        let coverage = mask.coverage();
        if (coverage - stated).abs() > 1e-6 || !bucket.contains(coverage) {
            return Err(row(format!("mask coverage {coverage} disagrees with {stated} / bucket {bucket}")));
        }
        let corrupted = corrupt(&clean, &mask, fill)?;
        let s = Sample { id: rec[0].to_string(), split, bucket, coverage, clean, mask, corrupted };
        match split {
            Split::Train => ds.train.push(s),
            Split::Test => ds.test.push(s),
        }
    }
    Ok(ds)
}
