//! Sparse directional Parseval frame (SDPF) dictionaries and the
//! receptive-field CNNs built on them for blind image inpainting.
//!
//! Modules, bottom-up:
//!
//! - [`linalg`]: small dense matrices and a Jacobi SVD,
//! - [`sdpf`]: construction, verification and serialisation of the
//!   49-filter dictionary,
//! - [`tensor`]: NCHW arrays, convolution with exact backward passes, Adam,
//! - [`layers`]: dense and dictionary-constrained convolution layers,
//! - [`data`]: PGM IO, scribble masks, datasets and quality metrics,
//! - [`net`]: architectures, parameter counting, training and checkpoints.

pub mod data;
pub mod layers;
pub mod linalg;
pub mod net;
pub mod sdpf;
pub mod tensor;
