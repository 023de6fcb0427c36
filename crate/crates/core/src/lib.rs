//! Algorithmic core of `depthfuse`: a sparse-to-dense depth estimation toolkit.
//!
//! This crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! - [`tensor`] and [`tape`]: dense NCHW tensors and a reverse-mode tape with
//!   the handful of operations the network needs.
//! - [`model`]: the RGB + sparse-depth fusion encoder-decoder.
//! - [`losses`]: SSIM, image-gradient and pixel (L1/L2/Berhu) terms and the
//!   reciprocal-depth codec.
//! - [`geometry`]: pinhole projection of point clouds into sparse rasters.
//! - [`densify`]: intensity-guided propagation of sparse depth.
//! - [`metrics`]: RMSE, ARD, SRD and threshold accuracies.
//! - [`synth`], [`augment`], [`batch`]: the synthetic scene generator and the
//!   training-time data path.
//! - [`optim`] and [`train`]: Adam, the step learning-rate schedule and a
//!   single optimization step.
//! - [`gradcheck`]: finite-difference verification of every backward pass.
//!
//! File formats, dataset directories and the command line live in the
//! `depthfuse` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod batch;
pub mod densify;
mod error;
pub mod geometry;
pub mod gradcheck;
pub mod image;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
mod real;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};
