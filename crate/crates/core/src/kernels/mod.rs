//! Forward and backward kernels on raw tensors.
//!
//! Spatial operators accept `[B, C, H, W]` or `[B, C, D, H, W]` inputs and
//! internally treat 2D data as 3D with a unit depth axis. Convolutions use
//! the cross-correlation convention (no kernel flip) with zero padding.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;

pub use conv::ConvGeom;
