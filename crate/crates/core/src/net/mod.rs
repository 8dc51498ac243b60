//! Six-layer inpainting networks: architecture strings, assembly,
//! training, evaluation and checkpoints.
//!
//! Every network maps a `1`-channel image to a `1`-channel image of the
//! same size through widths [`WIDTHS`], with ReLU after the first five
//! layers and a linear output.

mod arch;
mod checkpoint;
mod train;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::data::DataError;
use crate::layers::{basis_from_dictionary, DenseConvLayer, Layer, LayerError, SdpfConvLayer};
use crate::sdpf::{Dictionary, SdpfError};
use crate::tensor::{mse_loss, relu, relu_backward, Tensor, TensorError};

pub use arch::{ArchConfig, LayerCode, DEFAULT_SPARSITY, NUM_LAYERS, POINTWISE_SLOT, WIDTHS};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    evaluate, evaluate_with, switch_train, train, train_with_hook, BucketRow, EpochRecord, Evaluation, History,
    SwitchReport, TrainConfig, HISTORY_HEADER,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture {0}")]
    Arch(String),
    #[error("checkpoint holds architecture {found}, expected {expected}")]
    ArchMismatch { expected: String, found: String },
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("switch epoch {switch} exceeds total epochs {epochs}")]
    SwitchAfterEnd { switch: usize, epochs: usize },
    #[error("architecture {0} has no dictionary-constrained layer")]
    NoSdpfLayer(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sdpf(#[from] SdpfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gradients of one layer, in [`Layer::params`] order.
pub type LayerGrads = [Tensor; 2];

#[derive(Clone, Debug)]
pub struct Network {
    arch: ArchConfig,
    layers: Vec<Layer>,
    dict: Arc<Dictionary>,
}

/// Equal architectures, dictionary filters and layer states.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.layers == other.layers
            && self.dict.lambda_star == other.dict.lambda_star
            && self.dict.filters == other.dict.filters
    }
}

/// Assembles `cfg` with fresh weights drawn from `rng`, layer by layer.
pub fn build_network(cfg: &ArchConfig, dict: Arc<Dictionary>, rng: &mut impl Rng) -> Result<Network, NetError> {
    let basis = basis_from_dictionary(&dict);
    let mut layers = Vec::with_capacity(NUM_LAYERS);
    for (i, code) in cfg.codes().iter().enumerate() {
        let (c_in, c_out) = (WIDTHS[i], WIDTHS[i + 1]);
        layers.push(match code {
            LayerCode::Sdpf => Layer::Sdpf(SdpfConvLayer::new(c_in, c_out, cfg.sparsity(), basis.clone(), rng)?),
            dense => Layer::Dense(DenseConvLayer::new(c_in, c_out, dense.kernel_size(), rng)),
        });
    }
    Network::from_layers(*cfg, dict, layers)
}

impl Network {
    /// Checks that `layers` realise `arch`.
    pub fn from_layers(arch: ArchConfig, dict: Arc<Dictionary>, layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.len() != NUM_LAYERS {
            return Err(NetError::Arch(format!("{} layers given, need {NUM_LAYERS}", layers.len())));
        }
        for (i, (l, code)) in layers.iter().zip(arch.codes()).enumerate() {
            let kind_ok = match (l, code) {
                (Layer::Sdpf(s), LayerCode::Sdpf) => s.sparsity() == arch.sparsity(),
                (Layer::Dense(d), c) => *c != LayerCode::Sdpf && d.kernel_size() == c.kernel_size(),
                _ => false,
            };
            if !kind_ok || l.c_in() != WIDTHS[i] || l.c_out() != WIDTHS[i + 1] {
                return Err(NetError::Arch(format!("layer {} does not match {arch}", i + 1)));
            }
        }
        Ok(Self { arch, layers, dict })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dictionary(&self) -> &Arc<Dictionary> {
        &self.dict
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `N × 1 × H × W` to `N × 1 × H × W`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NetError> {
        Ok(self.forward_cached(x)?.1)
    }

    /// Pre-activation output of layer `layer` (0-based) for input `x`.
    pub fn layer_response(&self, x: &Tensor, layer: usize) -> Result<Tensor, NetError> {
        assert!(layer < NUM_LAYERS, "layer index out of range");
        let mut cur = x.clone();
        for l in &self.layers[..layer] {
            cur = relu(&l.forward(&cur)?);
        }
        Ok(self.layers[layer].forward(&cur)?)
    }

    /// Returns the input of every layer alongside the output.
    fn forward_cached(&self, x: &Tensor) -> Result<(Vec<Tensor>, Tensor), NetError> {
        let mut inputs = Vec::with_capacity(NUM_LAYERS);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&cur)?;
            inputs.push(cur);
            cur = if i + 1 < NUM_LAYERS { relu(&z) } else { z };
        }
        Ok((inputs, cur))
    }

    /// Activity (`> 0`) of every hidden unit for input `x`, layer by layer.
    /// Two parameter settings with equal patterns lie in the same linear
    /// piece of the network.
    pub fn relu_pattern(&self, x: &Tensor) -> Result<Vec<bool>, NetError> {
        let (inputs, _) = self.forward_cached(x)?;
        Ok(inputs[1..].iter().flat_map(|t| t.data().iter().map(|&v| v > 0.0)).collect())
    }

    /// MSE of one `(input, target)` pair and its parameter gradients.
    pub fn sample_grads(&self, input: &Tensor, target: &Tensor) -> Result<(f64, Vec<LayerGrads>), NetError> {
        let (inputs, out) = self.forward_cached(input)?;
        let (loss, mut g) = mse_loss(&out, target)?;
        let mut grads = Vec::with_capacity(NUM_LAYERS);
        for i in (0..NUM_LAYERS).rev() {
            let (gin, pg) = self.layers[i].backward(&inputs[i], &g, i > 0)?;
            let [gk, gb]: [Tensor; 2] = pg.try_into().expect("two parameter tensors per layer");
            grads.push([gk, gb]);
            if let Some(gin) = gin {
                // inputs[i] is the ReLU output of layer i - 1.
                g = relu_backward(&inputs[i], &gin);
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// Mean per-sample MSE over `pairs` and its gradients. The reduction
    /// runs in slice order regardless of thread count.
    pub fn batch_grads(&self, pairs: &[(&Tensor, &Tensor)]) -> Result<(f64, Vec<LayerGrads>), NetError> {
        use rayon::prelude::*;
        let per_sample: Vec<(f64, Vec<LayerGrads>)> =
            pairs.par_iter().map(|(x, y)| self.sample_grads(x, y)).collect::<Result<_, _>>()?;
        let n = pairs.len() as f64;
        let mut iter = per_sample.into_iter();
        let (mut loss, mut acc) = iter.next().ok_or(NetError::EmptyDataset)?;
        for (l, g) in iter {
            loss += l;
            for (a, b) in acc.iter_mut().zip(&g) {
                a[0].add_assign(&b[0]);
                a[1].add_assign(&b[1]);
            }
        }
        for a in &mut acc {
            a[0].scale(1.0 / n);
            a[1].scale(1.0 / n);
        }
        Ok((loss / n, acc))
    }

    /// Mean per-sample MSE over `pairs`.
    pub fn batch_loss(&self, pairs: &[(&Tensor, &Tensor)]) -> Result<f64, NetError> {
        let mut total = 0.0;
        for (x, y) in pairs {
            total += mse_loss(&self.forward(x)?, y)?.0;
        }
        Ok(total / pairs.len() as f64)
    }

    /// Replaces every dictionary-constrained layer by its dense
    /// equivalent; returns how many were replaced.
    pub fn relax(&mut self) -> usize {
        let mut n = 0;
        for l in &mut self.layers {
            if let Layer::Sdpf(s) = l {
                *l = Layer::Dense(s.relax_to_dense());
                n += 1;
            }
        }
        self.arch = self.arch.relaxed();
        n
    }

    /// Largest least-squares residual of any constrained kernel against its
    /// assigned dictionary filters; zero for dense networks.
    pub fn max_span_residual(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Sdpf(s) => Some(crate::layers::max_span_residual(s)),
                Layer::Dense(_) => None,
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdpf::assemble_dictionary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    pub(crate) fn dict() -> Arc<Dictionary> {
        static D: OnceLock<Arc<Dictionary>> = OnceLock::new();
        D.get_or_init(|| Arc::new(assemble_dictionary().unwrap())).clone()
    }

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn built_counts_match_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for a in ["B-C-c-C-C-C", "C-C-c-C-C-C", "B-B-c-B-B-B", "C-B-c-C-B-C"] {
            let cfg = ArchConfig::parse(a).unwrap();
            let net = build_network(&cfg, dict(), &mut rng).unwrap();
            assert_eq!(net.param_count(), cfg.count_params(), "{a}");
        }
    }

    #[test]
    fn forward_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = build_network(&ArchConfig::gbcnn(), dict(), &mut rng).unwrap();
        for (h, w) in [(5, 5), (7, 12), (16, 9)] {
            let x = random_tensor([2, 1, h, w], &mut rng);
            assert_eq!(net.forward(&x).unwrap().shape(), [2, 1, h, w]);
        }
    }

    #[test]
    fn last_layer_response_is_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = build_network(&ArchConfig::gbcnn(), dict(), &mut rng).unwrap();
        let x = random_tensor([1, 1, 9, 9], &mut rng);
        assert_eq!(net.layer_response(&x, NUM_LAYERS - 1).unwrap(), net.forward(&x).unwrap());
        let first = net.layer_response(&x, 0).unwrap();
        assert_eq!(first, net.layers()[0].forward(&x).unwrap());
        assert_eq!(first.shape(), [1, 64, 9, 9]);
    }

    #[test]
    fn builds_are_deterministic() {
        let a = build_network(&ArchConfig::gbcnn(), dict(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = build_network(&ArchConfig::gbcnn(), dict(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let c = build_network(&ArchConfig::gbcnn(), dict(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn from_layers_rejects_wrong_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = build_network(&ArchConfig::ircnn(), dict(), &mut rng).unwrap();
        let err = Network::from_layers(ArchConfig::gbcnn(), dict(), net.layers().to_vec());
        assert!(matches!(err, Err(NetError::Arch(_))));
    }

    #[test]
    fn relaxation_is_output_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = build_network(&ArchConfig::parse("B-B-c-C-B-C").unwrap(), dict(), &mut rng).unwrap();
        let x = random_tensor([1, 1, 16, 16], &mut rng);
        let before = net.forward(&x).unwrap();
        assert_eq!(net.relax(), 3);
        assert_eq!(net.arch(), &ArchConfig::ircnn());
        assert_eq!(net.param_count(), 172_113);
        assert!(net.forward(&x).unwrap().max_abs_diff(&before) < 1e-12);
    }

    /// Norm-wise relative error of analytic against central-difference
    /// gradients on seeded entries of every parameter tensor. Entries whose
    /// `±h` probes land in different linear pieces are replaced.
    pub(crate) fn max_fd_error(net: &Network, pairs: &[(&Tensor, &Tensor)], per_tensor: usize, seed: u64) -> f64 {
        let (_, grads) = net.batch_grads(pairs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let h = 1e-5;
        let pattern = |n: &Network| -> Vec<Vec<bool>> { pairs.iter().map(|(x, _)| n.relu_pattern(x).unwrap()).collect() };
        for li in 0..NUM_LAYERS {
            for pi in 0..2 {
                let n = grads[li][pi].numel();
                let order = rand::seq::index::sample(&mut rng, n, n).into_vec();
                let (mut diff, mut an_norm, mut fd_norm, mut used) = (0.0, 0.0, 0.0, 0);
                for e in order {
                    if used == per_tensor {
                        break;
                    }
                    let mut probe = net.clone();
                    let orig = probe.layers[li].params()[pi].value.data()[e];
                    probe.layers[li].params_mut()[pi].value.data_mut()[e] = orig + h;
                    let (up, p_up) = (probe.batch_loss(pairs).unwrap(), pattern(&probe));
                    probe.layers[li].params_mut()[pi].value.data_mut()[e] = orig - h;
                    let (down, p_down) = (probe.batch_loss(pairs).unwrap(), pattern(&probe));
                    if p_up != p_down {
                        continue;
                    }
                    let fd = (up - down) / (2.0 * h);
                    let an = grads[li][pi].data()[e];
                    diff += (fd - an) * (fd - an);
                    an_norm += an * an;
                    fd_norm += fd * fd;
                    used += 1;
                }
                assert!(used > 0, "no kink-free entry in layer {li} tensor {pi}");
                let scale = an_norm.sqrt().max(fd_norm.sqrt()).max(1e-12);
                worst = worst.max(diff.sqrt() / scale);
            }
        }
        worst
    }

    /// Moves biases off zero so no pre-activation sits exactly on a ReLU
    /// kink, where central differences see slope 1/2.
    pub(crate) fn jitter_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
        for l in net.layers_mut() {
            let [_, b] = l.params_mut();
            for v in b.value.data_mut() {
                *v = rng.random_range(-0.05..0.05);
            }
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = build_network(&ArchConfig::parse("B-C-c-B-C-C").unwrap(), dict(), &mut rng).unwrap();
        jitter_biases(&mut net, &mut rng);
        let xs: Vec<Tensor> = (0..2).map(|_| random_tensor([1, 1, 16, 16], &mut rng)).collect();
        let ys: Vec<Tensor> = (0..2).map(|_| random_tensor([1, 1, 16, 16], &mut rng)).collect();
        let pairs: Vec<(&Tensor, &Tensor)> = xs.iter().zip(&ys).collect();
        let err = max_fd_error(&net, &pairs, 6, 8);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = build_network(&ArchConfig::gbcnn(), dict(), &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|_| random_tensor([1, 1, 8, 8], &mut rng)).collect();
        let ys: Vec<Tensor> = (0..3).map(|_| random_tensor([1, 1, 8, 8], &mut rng)).collect();
        let pairs: Vec<(&Tensor, &Tensor)> = xs.iter().zip(&ys).collect();
        let (loss, g) = net.batch_grads(&pairs).unwrap();
        let mut expect_loss = 0.0;
        let mut expect = Tensor::zeros(g[0][0].shape());
        for (x, y) in &pairs {
            let (l, gs) = net.sample_grads(x, y).unwrap();
            expect_loss += l / 3.0;
            let mut t = gs[0][0].clone();
            t.scale(1.0 / 3.0);
            expect.add_assign(&t);
        }
        assert!((loss - expect_loss).abs() < 1e-15);
        assert!(g[0][0].max_abs_diff(&expect) < 1e-15);
        assert!((net.batch_loss(&pairs).unwrap() - loss).abs() < 1e-15);
    }
}
