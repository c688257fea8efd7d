//! Few-shot semantic segmentation of 3D point clouds with bidirectional
//! feature globalization.
//!
//! The crate is organized as a pipeline:
//!
//! - [`cloud`] / [`synth`]: labeled point clouds, synthetic scene generation,
//!   block splitting, fixed-size sampling, and augmentation.
//! - [`autograd`]: reverse-mode differentiation over dense 64-bit tensors.
//! - [`embedder`]: a light edge-convolution feature network shared by the
//!   support and query branches.
//! - [`prototype`]: sparse prototype generation (masking, farthest point
//!   sampling, part assignment, per-part averaging) and prototype assembly.
//! - [`bfg`]: similarity kernels and the bidirectional globalization
//!   operators between points and prototypes.
//! - [`fewshot`]: episode construction, the metric head, the episode loss,
//!   and the trainer.
//! - [`eval`]: mIoU accumulation, the module-ablation ladder, and
//!   hyper-parameter sweeps.
//!
//! Everything here is `no_std` (with `alloc`): all I/O, file formats, and
//! the command line live in the companion `bfg-cli` crate.

#![no_std]
// Validation guards are written `!(x > 0.0)` on purpose: unlike `x <= 0.0`,
// the negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;


pub mod autograd;
pub mod bfg;
pub mod cloud;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod params;
pub mod prototype;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
