use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::save_checkpoint;
use super::{NetError, Network};
use crate::data::mix_seed;
use crate::data::{Bucket, GrayImage, ImageMetrics, Sample};
use crate::tensor::{adam_step, AdamConfig, Tensor};

pub const HISTORY_HEADER: &str = "epoch,train_mse,test_psnr,test_ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Last epoch to run (inclusive, 1-based).
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Epochs already completed; training resumes at `start_epoch + 1`.
    pub start_epoch: usize,
    /// Test-set evaluation cadence in epochs; 0 disables it.
    pub eval_every: usize,
    /// Checkpoint cadence in epochs; 0 disables it.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            adam: AdamConfig::default(),
            seed: 0,
            start_epoch: 0,
            eval_every: 0,
            checkpoint_every: 10,
            checkpoint_dir: None,
        }
    }
}

/// One history row. Row 0 holds the loss of the untrained network over
/// the full training set; row `e > 0` holds the mean batch loss seen
/// during epoch `e`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_psnr: Option<f64>,
    pub test_ssim: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch after which constrained layers were relaxed.
    pub switch_epoch: Option<usize>,
}

impl History {
    pub fn initial_train_mse(&self) -> Option<f64> {
        self.records.first().map(|r| r.train_mse)
    }

    pub fn final_train_mse(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_mse)
    }

    /// Shortest round-trip decimal for every value; empty cells for
    /// epochs without a test evaluation.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTORY_HEADER}\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_mse, opt(r.test_psnr), opt(r.test_ssim));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Per-bucket mean metrics; `bucket == None` is the whole set.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketRow {
    pub bucket: Option<Bucket>,
    pub count: usize,
    pub mean: ImageMetrics,
}

impl BucketRow {
    pub fn label(&self) -> String {
        self.bucket.map_or_else(|| "total".to_string(), |b| b.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_image: Vec<(String, Bucket, ImageMetrics)>,
    /// Five bucket rows in order, then the total.
    pub rows: Vec<BucketRow>,
    /// Mean wall-clock time of one restoration.
    pub mean_forward_ms: f64,
}

impl Evaluation {
    pub fn total(&self) -> &BucketRow {
        self.rows.last().expect("total row")
    }
}

/// Scores `restore(corrupted)` against `clean` for every sample.
pub fn evaluate_with<F>(samples: &[Sample], clamp: bool, restore: F) -> Result<Evaluation, NetError>
where
    F: Fn(&GrayImage) -> Result<GrayImage, NetError> + Sync,
{
    let scored: Vec<(ImageMetrics, f64)> = samples
        .par_iter()
        .map(|s| {
            let t0 = Instant::now();
            let out = restore(&s.corrupted)?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            let out = if clamp { out.clamped() } else { out };
            Ok((ImageMetrics::compute(&s.clean, &out)?, ms))
        })
        .collect::<Result<_, NetError>>()?;

    let per_image: Vec<(String, Bucket, ImageMetrics)> =
        samples.iter().zip(&scored).map(|(s, (m, _))| (s.id.clone(), s.bucket, *m)).collect();
    let mut rows: Vec<BucketRow> = Bucket::ALL
        .iter()
        .map(|&b| {
            let ms: Vec<ImageMetrics> = per_image.iter().filter(|p| p.1 == b).map(|p| p.2).collect();
            BucketRow { bucket: Some(b), count: ms.len(), mean: ImageMetrics::mean(&ms) }
        })
        .collect();
    let all: Vec<ImageMetrics> = per_image.iter().map(|p| p.2).collect();
    rows.push(BucketRow { bucket: None, count: all.len(), mean: ImageMetrics::mean(&all) });
    let mean_forward_ms =
        if scored.is_empty() { 0.0 } else { scored.iter().map(|p| p.1).sum::<f64>() / scored.len() as f64 };
    Ok(Evaluation { per_image, rows, mean_forward_ms })
}

/// Restores every corrupted image with `net`; outputs are clamped to
/// `[0, 1]` before scoring when `clamp` is set.
pub fn evaluate(net: &Network, samples: &[Sample], clamp: bool) -> Result<Evaluation, NetError> {
    evaluate_with(samples, clamp, |img| Ok(GrayImage::from_tensor(&net.forward(&img.to_tensor())?, 0, 0)))
}

fn to_pairs(samples: &[Sample]) -> Vec<(Tensor, Tensor)> {
    samples.iter().map(|s| (s.corrupted.to_tensor(), s.clean.to_tensor())).collect()
}

fn test_scores(net: &Network, test: &[Sample]) -> Result<(Option<f64>, Option<f64>), NetError> {
    if test.is_empty() {
        return Ok((None, None));
    }
    let t = evaluate(net, test, true)?.total().mean;
    Ok((Some(t.psnr), Some(t.ssim)))
}

fn wants_eval(cfg: &TrainConfig, epoch: usize) -> bool {
    cfg.eval_every > 0 && (epoch.is_multiple_of(cfg.eval_every) || epoch == cfg.epochs)
}

fn run_epochs(
    net: &mut Network,
    pairs: &[(Tensor, Tensor)],
    test: &[Sample],
    cfg: &TrainConfig,
    history: &mut History,
    hook: &mut dyn FnMut(&Network, &EpochRecord),
) -> Result<(), NetError> {
    let batch = cfg.batch_size.max(1);
    for epoch in cfg.start_epoch + 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let refs: Vec<(&Tensor, &Tensor)> = chunk.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();
            let (loss, grads) = net.batch_grads(&refs)?;
            if !loss.is_finite() || grads.iter().any(|g| !g[0].is_finite() || !g[1].is_finite()) {
                return Err(NetError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
            for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
                for (p, g) in layer.params_mut().into_iter().zip(g) {
                    p.grad = g;
                    adam_step(p, &cfg.adam);
                }
            }
        }
        let (test_psnr, test_ssim) = if wants_eval(cfg, epoch) { test_scores(net, test)? } else { (None, None) };
        let rec = EpochRecord { epoch, train_mse: total / pairs.len() as f64, test_psnr, test_ssim };
        history.records.push(rec);
        hook(net, &rec);
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                save_checkpoint(net, cfg.seed, epoch, true, &dir.join(format!("epoch_{epoch:04}.gbck")))?;
            }
        }
    }
    Ok(())
}

fn initial_record(net: &Network, pairs: &[(Tensor, Tensor)], test: &[Sample], cfg: &TrainConfig) -> Result<EpochRecord, NetError> {
    let refs: Vec<(&Tensor, &Tensor)> = pairs.iter().map(|(x, y)| (x, y)).collect();
    let (test_psnr, test_ssim) = if cfg.eval_every > 0 { test_scores(net, test)? } else { (None, None) };
    Ok(EpochRecord { epoch: 0, train_mse: net.batch_loss(&refs)?, test_psnr, test_ssim })
}

/// Adam on the mean per-image MSE, reshuffling `train` every epoch with a
/// generator seeded by `(cfg.seed, epoch)`, so a run resumed from a
/// checkpoint of epoch `k` continues exactly as the uninterrupted run.
pub fn train_with_hook(
    net: &mut Network,
    train: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(&Network, &EpochRecord),
) -> Result<History, NetError> {
    if train.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let pairs = to_pairs(train);
    let mut history = History::default();
    if cfg.start_epoch == 0 {
        let rec = initial_record(net, &pairs, test, cfg)?;
        history.records.push(rec);
        hook(net, &rec);
    }
    run_epochs(net, &pairs, test, cfg, &mut history, hook)?;
    Ok(history)
}

pub fn train(net: &mut Network, train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<History, NetError> {
    train_with_hook(net, train, test, cfg, &mut |_, _| {})
}

/// Outcome of relaxing the constrained layers mid-training.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchReport {
    pub switch_epoch: usize,
    /// Largest output change on probe training images caused by relaxing.
    pub max_abs_diff: f64,
    pub params_before: usize,
    pub params_after: usize,
}

/// Number of training images used to probe output continuity.
const SWITCH_PROBES: usize = 4;

/// Trains `net` up to `switch_epoch`, relaxes every constrained layer to
/// a dense one with identical kernels and fresh optimizer state, then
/// trains on to `cfg.epochs`.
pub fn switch_train(
    net: &mut Network,
    train: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
    switch_epoch: usize,
) -> Result<(History, SwitchReport), NetError> {
    if switch_epoch > cfg.epochs {
        return Err(NetError::SwitchAfterEnd { switch: switch_epoch, epochs: cfg.epochs });
    }
    if !net.arch().has_sdpf() {
        return Err(NetError::NoSdpfLayer(net.arch().to_string()));
    }
    if train.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let pairs = to_pairs(train);
    let mut history = History { switch_epoch: Some(switch_epoch), ..History::default() };
    let mut hook = |_: &Network, _: &EpochRecord| {};
    if cfg.start_epoch == 0 {
        history.records.push(initial_record(net, &pairs, test, cfg)?);
    }
    let phase1 = TrainConfig { epochs: switch_epoch, ..cfg.clone() };
    run_epochs(net, &pairs, test, &phase1, &mut history, &mut hook)?;

    let probes = &pairs[..pairs.len().min(SWITCH_PROBES)];
    let before: Vec<Tensor> = probes.iter().map(|(x, _)| net.forward(x)).collect::<Result<_, _>>()?;
    let params_before = net.param_count();
    net.relax();
    let mut max_abs_diff: f64 = 0.0;
    for ((x, _), b) in probes.iter().zip(&before) {
        max_abs_diff = max_abs_diff.max(net.forward(x)?.max_abs_diff(b));
    }
    let report = SwitchReport { switch_epoch, max_abs_diff, params_before, params_after: net.param_count() };

    let phase2 = TrainConfig { start_epoch: cfg.start_epoch.max(switch_epoch), ..cfg.clone() };
    run_epochs(net, &pairs, test, &phase2, &mut history, &mut hook)?;
    Ok((history, report))
}
