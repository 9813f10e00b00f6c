//! Multi-view texture super-resolution.
//!
//! A high-resolution texture is recovered from several low-resolution views
//! by inverting an explicit image-formation model (projection, flow warp,
//! blur, downsampling) with an unrolled primal-dual solver for a weighted
//! total-variation energy. The solver's free parameters and a small residual
//! prior network are trained by differentiating through the unrolled steps.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod commands;
pub mod error;
pub mod io;
pub mod learn;
pub mod metrics;
pub mod operators;
pub mod raster;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{Mask, Raster};
