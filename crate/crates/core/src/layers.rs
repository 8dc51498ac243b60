//! Trainable convolution layers.
//!
//! [`DenseConvLayer`] learns every kernel entry. [`SdpfConvLayer`] learns
//! only the coefficients of a fixed, randomly drawn set of `s` dictionary
//! filters per kernel slot: `S_k = Σ_{i∈I_k} α_{k,i} B_i`.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::sdpf::{Dictionary, FILTER_LEN, FILTER_SIZE};
use crate::tensor::{conv2d, conv2d_backward, Param, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("sparsity must lie in 1..={max}, got {got}")]
    InvalidSparsity { got: usize, max: usize },
    #[error("dictionary index {0} out of range")]
    IndexOutOfRange(u32),
    #[error("repeated dictionary index within one kernel slot")]
    RepeatedIndex,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Row-major 5×5 kernels of the dictionary, shared between layers.
pub type Basis = Arc<[[f64; FILTER_LEN]]>;

pub fn basis_from_dictionary(d: &Dictionary) -> Basis {
    d.kernels().into()
}

fn uniform(shape: [usize; 4], limit: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Ordinary convolution with learned `k × k` kernels and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseConvLayer {
    pub kernels: Param,
    pub bias: Param,
}

impl DenseConvLayer {
    /// Glorot-uniform kernels, zero bias.
    pub fn new(c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / ((c_in + c_out) * k * k) as f64).sqrt();
        Self::from_parts(uniform([c_out, c_in, k, k], limit, rng), vec![0.0; c_out])
    }

    pub fn from_parts(kernels: Tensor, bias: Vec<f64>) -> Self {
        let c_out = kernels.shape()[0];
        assert_eq!(bias.len(), c_out);
        let bias = Tensor::from_vec([c_out, 1, 1, 1], bias).expect("bias length");
        Self { kernels: Param::new(kernels), bias: Param::new(bias) }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.value.shape()[2]
    }

    pub fn c_in(&self) -> usize {
        self.kernels.value.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.kernels.value.shape()[0]
    }

    /// `k²·C_in·C_out + C_out`.
    pub fn param_count(&self) -> usize {
        self.kernels.numel() + self.bias.numel()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        Ok(conv2d(x, &self.kernels.value, self.bias.value.data())?)
    }

    /// Returns the input gradient (if requested) and the parameter
    /// gradients in [`Layer::params`] order.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), LayerError> {
        let g = conv2d_backward(x, &self.kernels.value, grad_out, want_input_grad)?;
        let bias = Tensor::from_vec(self.bias.value.shape(), g.bias)?;
        Ok((g.input, vec![g.kernels, bias]))
    }
}

/// Convolution whose kernels are sparse combinations of dictionary filters.
#[derive(Clone, Debug)]
pub struct SdpfConvLayer {
    basis: Basis,
    sparsity: usize,
    c_in: usize,
    c_out: usize,
    /// `C_out·C_in·s` zero-based dictionary indices, slot-major.
    index_sets: Vec<u32>,
    /// Shape `C_out × C_in × s × 1`.
    pub coeffs: Param,
    pub bias: Param,
}

impl PartialEq for SdpfConvLayer {
    fn eq(&self, other: &Self) -> bool {
        self.basis[..] == other.basis[..]
            && self.sparsity == other.sparsity
            && self.index_sets == other.index_sets
            && self.coeffs == other.coeffs
            && self.bias == other.bias
    }
}

impl SdpfConvLayer {
    /// Draws every index set uniformly without replacement and the
    /// coefficients uniformly on `±√(6 / (25·C_in + 25·C_out))`.
    pub fn new(
        c_in: usize,
        c_out: usize,
        sparsity: usize,
        basis: Basis,
        rng: &mut impl Rng,
    ) -> Result<Self, LayerError> {
        if sparsity == 0 || sparsity > basis.len() {
            return Err(LayerError::InvalidSparsity { got: sparsity, max: basis.len() });
        }
        let mut index_sets = Vec::with_capacity(c_out * c_in * sparsity);
        for _ in 0..c_out * c_in {
            index_sets.extend(index::sample(rng, basis.len(), sparsity).iter().map(|i| i as u32));
        }
        let limit = (6.0 / (FILTER_LEN * (c_in + c_out)) as f64).sqrt();
        let coeffs = uniform([c_out, c_in, sparsity, 1], limit, rng);
        Self::from_parts(basis, sparsity, index_sets, coeffs, vec![0.0; c_out])
    }

    pub fn from_parts(
        basis: Basis,
        sparsity: usize,
        index_sets: Vec<u32>,
        coeffs: Tensor,
        bias: Vec<f64>,
    ) -> Result<Self, LayerError> {
        let [c_out, c_in, s, one] = coeffs.shape();
        if s != sparsity || one != 1 || index_sets.len() != c_out * c_in * s || bias.len() != c_out {
            return Err(TensorError::ShapeMismatch {
                expected: vec![c_out, c_in, sparsity, 1],
                got: coeffs.shape().to_vec(),
            }
            .into());
        }
        if sparsity == 0 || sparsity > basis.len() {
            return Err(LayerError::InvalidSparsity { got: sparsity, max: basis.len() });
        }
        for slot in index_sets.chunks_exact(sparsity) {
            for (j, &i) in slot.iter().enumerate() {
                if i as usize >= basis.len() {
                    return Err(LayerError::IndexOutOfRange(i));
                }
                if slot[..j].contains(&i) {
                    return Err(LayerError::RepeatedIndex);
                }
            }
        }
        let bias = Tensor::from_vec([c_out, 1, 1, 1], bias)?;
        Ok(Self {
            basis,
            sparsity,
            c_in,
            c_out,
            index_sets,
            coeffs: Param::new(coeffs),
            bias: Param::new(bias),
        })
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// Zero-based dictionary indices of kernel slot `(out, in)`.
    pub fn index_set(&self, out: usize, inp: usize) -> &[u32] {
        let slot = out * self.c_in + inp;
        &self.index_sets[slot * self.sparsity..(slot + 1) * self.sparsity]
    }

    pub fn index_sets(&self) -> &[u32] {
        &self.index_sets
    }

    /// `s·C_in·C_out + C_out`.
    pub fn param_count(&self) -> usize {
        self.coeffs.numel() + self.bias.numel()
    }

    /// Dense `C_out × C_in × 5 × 5` kernels `Σ α_{k,i} B_i`.
    pub fn materialize_kernels(&self) -> Tensor {
        let mut k = Tensor::zeros([self.c_out, self.c_in, FILTER_SIZE, FILTER_SIZE]);
        let alphas = self.coeffs.value.data();
        for (slot, kernel) in k.data_mut().chunks_exact_mut(FILTER_LEN).enumerate() {
            let range = slot * self.sparsity..(slot + 1) * self.sparsity;
            for (&idx, &alpha) in self.index_sets[range.clone()].iter().zip(&alphas[range]) {
                let b = &self.basis[idx as usize];
                kernel.iter_mut().zip(b).for_each(|(s, v)| *s += alpha * v);
            }
        }
        k
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        Ok(conv2d(x, &self.materialize_kernels(), self.bias.value.data())?)
    }

    /// Chain rule through the expansion: `∂L/∂α_{k,i} = ⟨∂L/∂S_k, B_i⟩`.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), LayerError> {
        let g = conv2d_backward(x, &self.materialize_kernels(), grad_out, want_input_grad)?;
        let mut grad_alpha = Tensor::zeros(self.coeffs.value.shape());
        let ga = grad_alpha.data_mut();
        for (slot, gk) in g.kernels.data().chunks_exact(FILTER_LEN).enumerate() {
            for j in 0..self.sparsity {
                let b = &self.basis[self.index_sets[slot * self.sparsity + j] as usize];
                ga[slot * self.sparsity + j] = gk.iter().zip(b).map(|(p, q)| p * q).sum();
            }
        }
        let bias = Tensor::from_vec(self.bias.value.shape(), g.bias)?;
        Ok((g.input, vec![grad_alpha, bias]))
    }

    /// Dense layer with the current effective kernels and bias and a fresh
    /// optimizer state.
    pub fn relax_to_dense(&self) -> DenseConvLayer {
        DenseConvLayer::from_parts(self.materialize_kernels(), self.bias.value.data().to_vec())
    }
}

/// Either kind of trainable convolution.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(DenseConvLayer),
    Sdpf(SdpfConvLayer),
}

impl Layer {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Sdpf(l) => l.forward(x),
        }
    }

    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), LayerError> {
        match self {
            Layer::Dense(l) => l.backward(x, grad_out, want_input_grad),
            Layer::Sdpf(l) => l.backward(x, grad_out, want_input_grad),
        }
    }

    /// Trainable parameters: kernels or coefficients first, then bias.
    pub fn params(&self) -> [&Param; 2] {
        match self {
            Layer::Dense(l) => [&l.kernels, &l.bias],
            Layer::Sdpf(l) => [&l.coeffs, &l.bias],
        }
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        match self {
            Layer::Dense(l) => [&mut l.kernels, &mut l.bias],
            Layer::Sdpf(l) => [&mut l.coeffs, &mut l.bias],
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(l) => l.param_count(),
            Layer::Sdpf(l) => l.param_count(),
        }
    }

    pub fn c_in(&self) -> usize {
        match self {
            Layer::Dense(l) => l.c_in(),
            Layer::Sdpf(l) => l.c_in(),
        }
    }

    pub fn c_out(&self) -> usize {
        match self {
            Layer::Dense(l) => l.c_out(),
            Layer::Sdpf(l) => l.c_out(),
        }
    }

    /// Effective convolution kernels.
    pub fn kernels(&self) -> Tensor {
        match self {
            Layer::Dense(l) => l.kernels.value.clone(),
            Layer::Sdpf(l) => l.materialize_kernels(),
        }
    }

    pub fn is_sdpf(&self) -> bool {
        matches!(self, Layer::Sdpf(_))
    }
}

/// Least-squares residual norm of `kernel` against the span of `atoms`.
///
/// Uses twice-iterated modified Gram-Schmidt; numerically zero atoms are
/// ignored.
pub fn span_residual(kernel: &[f64], atoms: &[&[f64]]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q: Vec<Vec<f64>> = Vec::new();
    for atom in atoms {
        let mut v = atom.to_vec();
        let scale = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for e in &q {
                let p = dot(&v, e);
                v.iter_mut().zip(e).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 * scale.max(1e-300) && n > 1e-14 {
            v.iter_mut().for_each(|x| *x /= n);
            q.push(v);
        }
    }
    let mut r = kernel.to_vec();
    for _ in 0..2 {
        for e in &q {
            let p = dot(&r, e);
            r.iter_mut().zip(e).for_each(|(x, y)| *x -= p * y);
        }
    }
    dot(&r, &r).sqrt()
}

/// Largest span residual over all kernel slots of an SDPF layer.
pub fn max_span_residual(layer: &SdpfConvLayer) -> f64 {
    let kernels = layer.materialize_kernels();
    let mut worst = 0.0f64;
    for (slot, k) in kernels.data().chunks_exact(FILTER_LEN).enumerate() {
        let (o, i) = (slot / layer.c_in(), slot % layer.c_in());
        let atoms: Vec<&[f64]> =
            layer.index_set(o, i).iter().map(|&j| &layer.basis()[j as usize][..]).collect();
        worst = worst.max(span_residual(k, &atoms));
    }
    worst
}
