//! From-scratch deep learning and signal processing for multichannel EEG
//! trial classification.
//!
//! The crate covers the full path from raw trials to accuracy reports with
//! every numerical kernel implemented in-repo: a dense f64 tensor with a
//! portable seeded RNG, NPY v1.0 interchange, arbitrary-length FFT with
//! spectral high-pass and Fourier downsampling, feed-forward and recurrent
//! layers with hand-written backward passes, softmax cross-entropy with Adam
//! and RMSProp, four reference architectures, and a training harness with
//! grid search and per-subject studies.

pub mod data;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod npy;
pub mod optim;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
