use std::fmt;
use std::str::FromStr;

use super::NetError;

/// Channel widths at the six layer boundaries plus input and output.
pub const WIDTHS: [usize; 7] = [1, 64, 64, 48, 32, 32, 1];
pub const NUM_LAYERS: usize = 6;
pub const DEFAULT_SPARSITY: usize = 3;
/// Zero-based position of the fixed `1 × 1` layer.
pub const POINTWISE_SLOT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerCode {
    /// `C`: dense 5×5 convolution.
    Dense5,
    /// `c`: dense 1×1 convolution.
    Dense1,
    /// `B`: 5×5 convolution constrained to the dictionary.
    Sdpf,
}

impl LayerCode {
    pub fn symbol(self) -> char {
        match self {
            LayerCode::Dense5 => 'C',
            LayerCode::Dense1 => 'c',
            LayerCode::Sdpf => 'B',
        }
    }

    pub fn kernel_size(self) -> usize {
        match self {
            LayerCode::Dense1 => 1,
            _ => 5,
        }
    }

    /// Trainable scalars of a layer with this code.
    pub fn param_count(self, c_in: usize, c_out: usize, sparsity: usize) -> usize {
        let per_slot = match self {
            LayerCode::Dense5 => 25,
            LayerCode::Dense1 => 1,
            LayerCode::Sdpf => sparsity,
        };
        per_slot * c_in * c_out + c_out
    }
}

/// Six layer codes of the form `X-X-c-X-X-X`, `X ∈ {B, C}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    codes: [LayerCode; NUM_LAYERS],
    sparsity: usize,
}

impl ArchConfig {
    pub fn parse(s: &str) -> Result<Self, NetError> {
        let bad = |msg: &str| NetError::Arch(format!("`{s}`: {msg}"));
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != NUM_LAYERS {
            return Err(bad("expected six dash-separated layer codes"));
        }
        let mut codes = [LayerCode::Dense5; NUM_LAYERS];
        for (i, p) in parts.iter().enumerate() {
            codes[i] = match (*p, i == POINTWISE_SLOT) {
                ("c", true) => LayerCode::Dense1,
                (_, true) => return Err(bad("the third layer must be `c`")),
                ("C", false) => LayerCode::Dense5,
                ("B", false) => LayerCode::Sdpf,
                (other, false) => return Err(bad(&format!("layer {} has code `{other}`, expected B or C", i + 1))),
            };
        }
        Ok(Self { codes, sparsity: DEFAULT_SPARSITY })
    }

    pub fn with_sparsity(mut self, sparsity: usize) -> Self {
        self.sparsity = sparsity;
        self
    }

    /// `B-C-c-C-C-C`.
    pub fn gbcnn() -> Self {
        Self::parse("B-C-c-C-C-C").expect("valid")
    }

    /// `C-C-c-C-C-C`.
    pub fn ircnn() -> Self {
        Self::parse("C-C-c-C-C-C").expect("valid")
    }

    pub fn codes(&self) -> &[LayerCode; NUM_LAYERS] {
        &self.codes
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn has_sdpf(&self) -> bool {
        self.codes.contains(&LayerCode::Sdpf)
    }

    /// Every `B` replaced by `C`.
    pub fn relaxed(&self) -> Self {
        let mut out = *self;
        for c in &mut out.codes {
            if *c == LayerCode::Sdpf {
                *c = LayerCode::Dense5;
            }
        }
        out
    }

    pub fn layer_params(&self, layer: usize) -> usize {
        self.codes[layer].param_count(WIDTHS[layer], WIDTHS[layer + 1], self.sparsity)
    }

    pub fn count_params(&self) -> usize {
        (0..NUM_LAYERS).map(|i| self.layer_params(i)).sum()
    }

    /// All 32 architectures, in binary order of the `B` positions.
    pub fn all() -> Vec<Self> {
        let free = [0, 1, 3, 4, 5];
        (0..32u32)
            .map(|mask| {
                let mut a = Self::ircnn();
                for (bit, &slot) in free.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        a.codes[slot] = LayerCode::Sdpf;
                    }
                }
                a
            })
            .collect()
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.codes.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{}", c.symbol())?;
        }
        Ok(())
    }
}

impl FromStr for ArchConfig {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
