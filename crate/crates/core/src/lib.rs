//! Alpha matting toolkit built around a trimap-guided non-local attention
//! block.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`numerics`]: `f64` tensors, reverse-mode autodiff and gradient checking
//! - [`morphology`]: square-element erosion/dilation and Gaussian blur
//! - [`synth`]: alpha compositing and composite dataset planning
//! - [`trimap`]: ground-truth, random and pseudo trimaps, soft segmentations
//! - [`attention`]: the region-weighted non-local attention block
//! - [`losses`]: regression, hard-mining, cross-entropy and LSGAN objectives
//! - [`fusion`]: soft and hard joint-inference fusion
//! - [`metrics`]: SAD, MSE, gradient and connectivity errors, trimap IoU
//! - [`modelgraph`]: layer graphs with shape inference and cost accounting
//! - [`trainkit`]: Adam, warmup + cosine schedule and a toy training loop

pub mod attention;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod modelgraph;
pub mod morphology;
pub mod numerics;
pub mod seed;
pub mod synth;
pub mod trainkit;
pub mod trimap;

pub use error::{Error, Result};
