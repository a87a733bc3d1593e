//! Core library for spectral-spatial image classifiers that are trained on
//! pixel patches and run fully-convolutionally over whole images.
//!
//! The crate is organized around a small layer-graph IR:
//!
//! - [`tensor`] — dense tensors and the deterministic numeric kernels
//!   (2-D/3-D convolution, batch norm, activations, pooling, padding).
//! - [`ir`] — the layer graph, shape inference, receptive-field arithmetic,
//!   and the structural rules an image-to-image network must satisfy.
//! - [`flops`] — the multiply-accumulate cost model comparing per-pixel
//!   patch inference against whole-image inference.
//! - [`transform`] — the rewrite pass that turns a patch classifier
//!   (FC head, strided/padded convs, global pooling) into a sliding,
//!   fully-convolutional equivalent.
//! - [`infer`] — patchwise, whole-image, and tiled prediction plus the
//!   equivalence verifier and map evaluation metrics.
//! - [`train`] — dataset splitting, patch sampling, backprop, and SGD.
//! - [`scene`] — hyperspectral cube / ground-truth containers and a seeded
//!   synthetic scene generator for desk-scale experiments.
//! - [`presets`] — ready-made network builders.
//!
//! The crate is `no_std`-compatible (`alloc` required); the default `std`
//! feature enables `rayon`-based parallelism. All kernels reduce in a fixed,
//! documented order, so results are bit-identical regardless of thread
//! count, and patch-mode and image-mode prediction agree bit-for-bit.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod flops;
mod forward;
pub mod grad;
pub mod infer;
pub mod ir;
pub mod metrics;
pub mod presets;
mod real;
pub mod scene;
pub mod tensor;
pub mod train;
pub mod transform;

pub use real::Real;
pub use tensor::{Precision, Tensor};
