//! Dense NCHW arrays and the handful of differentiable operations the
//! networks need: "same" convolution, ReLU, MSE, plus Adam.
//!
//! Convolution is cross-correlation with stride 1 and zero padding
//! `k / 2`, lowered to matrix products through an im2col buffer.

use std::cell::RefCell;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    BadLength { shape: [usize; 4], len: usize },
    #[error("kernel size {0} unsupported (must be odd)")]
    UnsupportedKernel(usize),
}

/// `N × C × H × W` array of doubles, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::BadLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Elements of one batch item.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|a| *a *= s);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|a| *a = value);
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape.to_vec(),
                got: other.shape.to_vec(),
            });
        }
        Ok(())
    }
}

/// `C = A·B + beta·C` for row/column strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, n, 1) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

thread_local! {
    /// Patch-matrix buffers reused across calls on the same thread.
    static SCRATCH: RefCell<[Vec<f64>; 2]> = const { RefCell::new([Vec::new(), Vec::new()]) };
}

/// Runs `f` with two scratch slices of the given lengths. Contents are
/// unspecified on entry.
fn with_scratch<R>(len_a: usize, len_b: usize, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut bufs = cell.borrow_mut();
        let [a, b] = &mut *bufs;
        if a.len() < len_a {
            a.resize(len_a, 0.0);
        }
        if b.len() < len_b {
            b.resize(len_b, 0.0);
        }
        f(&mut a[..len_a], &mut b[..len_b])
    })
}

/// Unfolds one `C × H × W` item into a `(C·k·k) × (H·W)` patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let x0 = (-dx).clamp(0, w as isize) as usize;
                    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    if x0 < x1 {
                        let s0 = (x0 as isize + dx) as usize;
                        dst[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the item.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, x: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let x0 = (-dx).clamp(0, w as isize) as usize;
                    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                    if x0 < x1 {
                        let s0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + s0..][..x1 - x0];
                        dst.iter_mut().zip(&src[x0..x1]).for_each(|(d, g)| *d += g);
                    }
                }
            }
        }
    }
}

fn check_conv_shapes(input: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    let [c_out, c_in, kh, kw] = kernels.shape;
    if kh != kw || kh % 2 == 0 {
        return Err(TensorError::UnsupportedKernel(kh.max(kw)));
    }
    if input.shape[1] != c_in {
        return Err(TensorError::ShapeMismatch {
            expected: vec![input.shape[0], c_in, input.shape[2], input.shape[3]],
            got: input.shape.to_vec(),
        });
    }
    Ok((c_out, c_in, kh))
}

/// Stride-1, zero-padded "same" cross-correlation plus per-channel bias.
///
/// `kernels` is `C_out × C_in × k × k`, `bias` has `C_out` entries.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor, TensorError> {
    let (c_out, c_in, k) = check_conv_shapes(input, kernels)?;
    if bias.len() != c_out {
        return Err(TensorError::ShapeMismatch { expected: vec![c_out], got: vec![bias.len()] });
    }
    let [n, _, h, w] = input.shape;
    let hw = h * w;
    let kk = c_in * k * k;
    let mut out = Tensor::zeros([n, c_out, h, w]);
    let cols_len = if k == 1 { 0 } else { kk * hw };
    with_scratch(cols_len, 0, |cols, _| {
        for b in 0..n {
            let x = input.item(b);
            let patches: &[f64] = if k == 1 {
                x
            } else {
                im2col(x, c_in, h, w, k, cols);
                cols
            };
            let y = out.item_mut(b);
            for (co, plane) in y.chunks_exact_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
            gemm(c_out, kk, hw, &kernels.data, (kk, 1), patches, (hw, 1), 1.0, y);
        }
    });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    /// `None` when not requested (first layer).
    pub input: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Vec<f64>,
}

/// Reverse-mode pass of [`conv2d`] given the forward input and upstream
/// gradient.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads, TensorError> {
    let (c_out, c_in, k) = check_conv_shapes(input, kernels)?;
    let [n, _, h, w] = input.shape;
    if grad_out.shape != [n, c_out, h, w] {
        return Err(TensorError::ShapeMismatch {
            expected: vec![n, c_out, h, w],
            got: grad_out.shape.to_vec(),
        });
    }
    let hw = h * w;
    let kk = c_in * k * k;
    let mut grad_k = Tensor::zeros(kernels.shape);
    let mut grad_b = vec![0.0; c_out];
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(input.shape));
    let cols_len = if k == 1 { 0 } else { kk * hw };
    let grad_cols_len = if want_input_grad { cols_len } else { 0 };

    with_scratch(cols_len, grad_cols_len, |cols, grad_cols| {
        for b in 0..n {
            let x = input.item(b);
            let g = grad_out.item(b);
            for (co, plane) in g.chunks_exact(hw).enumerate() {
                grad_b[co] += plane.iter().sum::<f64>();
            }
            let patches: &[f64] = if k == 1 {
                x
            } else {
                im2col(x, c_in, h, w, k, cols);
                cols
            };
            // dK += dY · Pᵀ
            gemm(c_out, hw, kk, g, (hw, 1), patches, (1, hw), 1.0, &mut grad_k.data);
            if let Some(gi) = grad_in.as_mut() {
                // dP = Kᵀ · dY
                if k == 1 {
                    gemm(kk, c_out, hw, &kernels.data, (1, kk), g, (hw, 1), 0.0, gi.item_mut(b));
                } else {
                    gemm(kk, c_out, hw, &kernels.data, (1, kk), g, (hw, 1), 0.0, grad_cols);
                    col2im(grad_cols, c_in, h, w, k, gi.item_mut(b));
                }
            }
        }
    });
    Ok(ConvGrads { input: grad_in, kernels: grad_k, bias: grad_b })
}

pub fn relu(t: &Tensor) -> Tensor {
    Tensor { shape: t.shape, data: t.data.iter().map(|&x| x.max(0.0)).collect() }
}

/// Gradient through ReLU; `activation` may be the ReLU input or its output
/// since both are positive at the same places. Zero at the kink.
pub fn relu_backward(activation: &Tensor, grad: &Tensor) -> Tensor {
    assert_eq!(activation.shape, grad.shape);
    Tensor {
        shape: grad.shape,
        data: activation
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), TensorError> {
    pred.check_same_shape(target)?;
    let n = pred.numel() as f64;
    let mut grad = Tensor::zeros(pred.shape);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

/// Mean absolute difference.
pub fn l1_metric(pred: &Tensor, target: &Tensor) -> Result<f64, TensorError> {
    pred.check_same_shape(target)?;
    let sum: f64 = pred.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.numel() as f64)
}

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape();
        Self {
            value,
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Drops the optimizer moments and step count.
    pub fn reset_optimizer(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update from `p.grad`.
pub fn adam_step(p: &mut Param, cfg: &AdamConfig) {
    p.t += 1;
    let t = p.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((x, g), m), v) in p
        .value
        .data
        .iter_mut()
        .zip(&p.grad.data)
        .zip(p.m.data.iter_mut())
        .zip(p.v.data.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}
