//! Numerical core of the medpipe segmentation and regression pipeline.
//!
//! Everything in this crate is a pure function over in-memory buffers:
//! tensors and reverse-mode differentiation, the convolutional model zoo,
//! intensity pre-processing, the augmentation suite, nested cross-validation
//! plans, sliding-window stitching and the histology tiling helpers.
//! File formats, configuration and the training driver live in the `medpipe`
//! crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod augment;
pub mod crossval;
pub mod error;
pub mod fft;
mod gemm;
pub mod gradcheck;
pub mod histology;
pub mod image;
pub mod inference;
pub mod kernels;
pub mod models;
pub mod optim;
pub mod patch;
pub mod preprocess;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{Geometry, Image};
pub use rng::Rng;
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::{Real, Tensor};
