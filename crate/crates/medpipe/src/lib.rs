//! Training, inference and file formats around `medpipe-core`.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod histology_io;
pub mod infer;
pub mod io;
pub mod preview;
pub mod queue;
pub mod splits;
pub mod synthetic;
pub mod trainer;

pub use error::{PipelineError, Result};
