//! Gradient-based meta-learning for communication links.
//!
//! The crate covers three training regimes over flat parameter vectors:
//! conventional per-task training, joint training on a task mixture, and
//! MAML with exact second-order meta-gradients through unrolled inner
//! updates. Two link simulations exercise them:
//!
//! * few-pilot demodulation of 16-QAM over single-tap Rayleigh fading with
//!   per-device transmitter distortion ([`tasks::TaskFamily::Demod`]);
//! * an end-to-end autoencoder over a 3-tap block-fading channel
//!   ([`nn::autoencoder`]).
//!
//! Module map:
//!
//! * [`autodiff`]: reverse-mode graphs, Hessian-vector products, unrolled
//!   meta-gradients.
//! * [`nn`]: MLPs, cross-entropy losses, the autoencoder link.
//! * [`channel`]: 16-QAM, Rayleigh taps, AWGN, transmitter distortion.
//! * [`tasks`]: task sampling and per-task datasets.
//! * [`learners`]: SGD, conventional/joint training, MAML.
//! * [`harness`]: configuration, sweeps, metrics, CSV output, self-checks.

pub mod autodiff;
pub mod channel;
pub mod error;
pub mod harness;
pub mod learners;
pub mod nn;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
