//! Convolutional sparse coding under Gaussian-mixture noise.
//!
//! The crate fits a bank of short filters and per-signal sparse code maps to
//! a batch of 1-D signals whose noise is modeled as a finite Gaussian
//! mixture. Fitting runs expectation-maximization: responsibilities and
//! mixture parameters have closed-form updates, and the filters and codes are
//! refreshed by a weighted sparse-coding step solved either with a
//! nonmonotone inertial proximal gradient method or with block-coordinate
//! ADMM. Plain squared-error and absolute-error sparse coding solvers are
//! included as baselines, along with a synthetic benchmark pipeline.
//!
//! Module map:
//! - [`signal`]: spectral transforms, pad/crop, convolutions.
//! - [`model`]: signals, filter banks, code sets, objective, proximal maps.
//! - [`gmm`]: mixture noise model (E-step, M-step, pruning, weights).
//! - [`wcsc`]: the weighted sparse-coding problem, gradients, the inertial
//!   proximal solver.
//! - [`admm`]: block-coordinate ADMM solvers (weighted and baselines).
//! - [`em`]: the outer fitting loop.
//! - [`synth`]: data generation, noise samplers, metrics, experiments.

pub mod admm;
pub mod em;
pub mod error;
pub mod gmm;
pub mod model;
pub mod signal;
pub mod synth;
mod util;
pub mod wcsc;

pub use error::{Error, Result};
