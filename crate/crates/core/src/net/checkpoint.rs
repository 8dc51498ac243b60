//! Binary checkpoints.
//!
//! Layout: magic `GBCK`, `u32` version, then sections `[tag; 4] u64 len
//! payload`. All integers and floats are little-endian.
//!
//! - `HEAD`: arch string, widths, seed, epoch, sparsity
//! - `DICT`: the dictionary in its text format
//! - `LAYR`: one per layer; dense kernels and bias, or index sets,
//!   coefficients and bias
//! - `OPTM`: optional Adam state of every parameter tensor

use std::path::Path;
use std::sync::Arc;

use super::{ArchConfig, NetError, Network, NUM_LAYERS, WIDTHS};
use crate::layers::{basis_from_dictionary, DenseConvLayer, Layer, SdpfConvLayer};
use crate::sdpf::{export_to_string, import_from_str};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_DENSE: u8 = 0;
const KIND_SDPF: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub has_optimizer: bool,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        for d in t.shape() {
            self.u32(d as u32);
        }
        for v in t.data() {
            self.0.extend(v.to_le_bytes());
        }
    }
    fn section(&mut self, tag: &[u8; 4], payload: Writer) {
        self.0.extend(tag);
        self.u64(payload.0.len() as u64);
        self.0.extend(payload.0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String, NetError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
    fn tensor(&mut self) -> Result<Tensor, NetError> {
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = self.u32()? as usize;
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Tensor::from_vec(shape, data)?)
    }
    fn section(&mut self) -> Result<Option<([u8; 4], Reader<'a>)>, NetError> {
        if self.pos == self.bytes.len() {
            return Ok(None);
        }
        let tag: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        let len = usize::try_from(self.u64()?).map_err(|_| corrupt("section too large"))?;
        Ok(Some((tag, Reader { bytes: self.take(len)?, pos: 0 })))
    }
    fn finish(&self) -> Result<(), NetError> {
        if self.pos != self.bytes.len() {
            return Err(corrupt("trailing bytes in section"));
        }
        Ok(())
    }
}

pub fn encode_checkpoint(net: &Network, seed: u64, epoch: usize, with_optimizer: bool) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);

    let mut head = Writer::default();
    head.str(&net.arch().to_string());
    head.u32(WIDTHS.len() as u32);
    for &x in &WIDTHS {
        head.u32(x as u32);
    }
    head.u64(seed);
    head.u64(epoch as u64);
    head.u32(net.arch().sparsity() as u32);
    w.section(b"HEAD", head);

    let mut dict = Writer::default();
    dict.str(&export_to_string(net.dictionary()));
    w.section(b"DICT", dict);

    for layer in net.layers() {
        let mut p = Writer::default();
        match layer {
            Layer::Dense(d) => {
                p.u8(KIND_DENSE);
                p.tensor(&d.kernels.value);
                p.tensor(&d.bias.value);
            }
            Layer::Sdpf(s) => {
                p.u8(KIND_SDPF);
                p.u32(s.sparsity() as u32);
                p.u32(s.index_sets().len() as u32);
                for &i in s.index_sets() {
                    p.u32(i);
                }
                p.tensor(&s.coeffs.value);
                p.tensor(&s.bias.value);
            }
        }
        w.section(b"LAYR", p);
    }

    if with_optimizer {
        let mut o = Writer::default();
        for layer in net.layers() {
            for p in layer.params() {
                o.u64(p.t);
                o.tensor(&p.m);
                o.tensor(&p.v);
            }
        }
        w.section(b"OPTM", o);
    }
    w.0
}

fn decode_layer(r: &mut Reader<'_>, basis: &crate::layers::Basis) -> Result<Layer, NetError> {
    let layer = match r.u8()? {
        KIND_DENSE => {
            let kernels = r.tensor()?;
            let bias = r.tensor()?;
            if bias.numel() != kernels.shape()[0] {
                return Err(corrupt("bias length does not match kernels"));
            }
            Layer::Dense(DenseConvLayer::from_parts(kernels, bias.into_vec()))
        }
        KIND_SDPF => {
            let s = r.u32()? as usize;
            let n = r.u32()? as usize;
            let idx = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let coeffs = r.tensor()?;
            let bias = r.tensor()?.into_vec();
            Layer::Sdpf(SdpfConvLayer::from_parts(basis.clone(), s, idx, coeffs, bias)?)
        }
        k => return Err(corrupt(format!("unknown layer kind {k}"))),
    };
    r.finish()?;
    Ok(layer)
}

/// Parses a checkpoint; with `expected` set, a different architecture is
/// an error.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ArchConfig>) -> Result<Checkpoint, NetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(corrupt("missing GBCK magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("version {version} unsupported (expected {CHECKPOINT_VERSION})")));
    }

    let (tag, mut head) = r.section()?.ok_or_else(|| corrupt("missing HEAD"))?;
    if &tag != b"HEAD" {
        return Err(corrupt("first section must be HEAD"));
    }
    let arch_str = head.str()?;
    let widths: Vec<usize> = (0..head.u32()?).map(|_| head.u32().map(|x| x as usize)).collect::<Result<_, _>>()?;
    if widths != WIDTHS {
        return Err(corrupt(format!("widths {widths:?} differ from {WIDTHS:?}")));
    }
    let seed = head.u64()?;
    let epoch = head.u64()? as usize;
    let arch = ArchConfig::parse(&arch_str)?.with_sparsity(head.u32()? as usize);
    head.finish()?;
    if let Some(exp) = expected {
        if *exp != arch {
            return Err(NetError::ArchMismatch { expected: exp.to_string(), found: arch.to_string() });
        }
    }

    let (tag, mut d) = r.section()?.ok_or_else(|| corrupt("missing DICT"))?;
    if &tag != b"DICT" {
        return Err(corrupt("second section must be DICT"));
    }
    let dict = Arc::new(import_from_str(&d.str()?)?);
    d.finish()?;
    let basis = basis_from_dictionary(&dict);

    let mut layers = Vec::with_capacity(NUM_LAYERS);
    for _ in 0..NUM_LAYERS {
        let (tag, mut l) = r.section()?.ok_or_else(|| corrupt("missing layer section"))?;
        if &tag != b"LAYR" {
            return Err(corrupt("expected LAYR section"));
        }
        layers.push(decode_layer(&mut l, &basis)?);
    }
    let mut network = Network::from_layers(arch, dict, layers)?;

    let mut has_optimizer = false;
    if let Some((tag, mut o)) = r.section()? {
        if &tag != b"OPTM" {
            return Err(corrupt(format!("unexpected section {:?}", String::from_utf8_lossy(&tag))));
        }
        for layer in network.layers_mut() {
            for p in layer.params_mut() {
                p.t = o.u64()?;
                let (m, v) = (o.tensor()?, o.tensor()?);
                if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                    return Err(corrupt("optimizer state shape mismatch"));
                }
                p.m = m;
                p.v = v;
            }
        }
        o.finish()?;
        has_optimizer = true;
    }
    r.finish()?;
    Ok(Checkpoint { network, seed, epoch, has_optimizer })
}

pub fn save_checkpoint(net: &Network, seed: u64, epoch: usize, with_optimizer: bool, path: &Path) -> Result<(), NetError> {
    std::fs::write(path, encode_checkpoint(net, seed, epoch, with_optimizer))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&ArchConfig>) -> Result<Checkpoint, NetError> {
    decode_checkpoint(&std::fs::read(path)?, expected)
}
