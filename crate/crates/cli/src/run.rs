use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use sdpf_core::data::MIN_MASK_SIDE;
use sdpf_core::net::ArchConfig;

/// A rejected argument combination; maps to exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Formats `x` rounded to six significant digits, in exponent notation
/// outside `[1e-4, 1e15)`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let rounded: f64 = sci.parse().expect("formatted float parses");
    if rounded == 0.0 || (1e-4..1e15).contains(&rounded.abs()) {
        return rounded.to_string();
    }
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    format!("{}e{exp}", mantissa.trim_end_matches('0').trim_end_matches('.'))
}

/// Complete configuration of one invocation, echoed into `run.json`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub arch: Option<String>,
    pub sparsity: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub switch_epoch: Option<usize>,
    pub data: Option<PathBuf>,
    pub num_samples: Option<usize>,
    pub size: Option<usize>,
    pub fill: Option<f64>,
    pub images_dir: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub eval_every: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub split: Option<String>,
    pub clamp: Option<bool>,
    pub layer: Option<usize>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), ..Self::default() }
    }

    /// Checks every field the command uses. Returns the parsed architecture
    /// when one is set.
    pub fn validate(&self) -> anyhow::Result<Option<ArchConfig>> {
        let arch = match &self.arch {
            Some(a) => {
                let cfg = ArchConfig::parse(a).map_err(|e| invalid(e.to_string()))?;
                let s = self.sparsity.unwrap_or(cfg.sparsity());
                if s == 0 || s > sdpf_core::sdpf::DICTIONARY_LEN {
                    return Err(invalid(format!(
                        "--sparsity must be in 1..={}, got {s}",
                        sdpf_core::sdpf::DICTIONARY_LEN
                    )));
                }
                Some(cfg.with_sparsity(s))
            }
            None => None,
        };
        if self.batch_size == Some(0) {
            return Err(invalid("--batch-size must be at least 1"));
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(invalid(format!("--lr must be positive and finite, got {lr}")));
            }
        }
        if let Some(fill) = self.fill {
            if !(0.0..=1.0).contains(&fill) {
                return Err(invalid(format!("--fill must lie in [0, 1], got {fill}")));
            }
        }
        if let Some(size) = self.size {
            if size < MIN_MASK_SIDE {
                return Err(invalid(format!("--size must be at least {MIN_MASK_SIDE}, got {size}")));
            }
        }
        if self.num_samples == Some(0) {
            return Err(invalid("--num-samples must be at least 1"));
        }
        if self.command == "switch-train" {
            let switch = self.switch_epoch.ok_or_else(|| invalid("switch-train requires --switch-epoch"))?;
            let epochs = self.epochs.unwrap_or(0);
            if switch > epochs {
                return Err(invalid(format!("--switch-epoch {switch} exceeds --epochs {epochs}")));
            }
            if !arch.is_some_and(|a| a.has_sdpf()) {
                return Err(invalid("switch-train needs an architecture with at least one `B` layer"));
            }
        } else if self.switch_epoch.is_some() {
            return Err(invalid("--switch-epoch is only accepted by switch-train"));
        }
        if self.layer == Some(0) || self.layer.is_some_and(|l| l > sdpf_core::net::NUM_LAYERS) {
            return Err(invalid(format!("--layer must be in 1..={}", sdpf_core::net::NUM_LAYERS)));
        }
        Ok(arch)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    outputs: &'a [PathBuf],
    results: &'a Value,
}

/// Writes `run.json` into `dir`.
pub fn write_manifest(dir: &Path, cfg: &RunConfig, outputs: &[PathBuf], results: &Value) -> anyhow::Result<PathBuf> {
    let m = Manifest { tool: "sdpf", version: env!("CARGO_PKG_VERSION"), config: cfg, outputs, results };
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
