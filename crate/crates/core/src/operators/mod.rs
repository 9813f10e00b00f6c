//! Image-formation operators: projection, flow warp, Gaussian blur and
//! downsampling, each with an exact adjoint, plus their per-view composition.

mod blur;
mod chain;
mod resample;
mod sparse;

pub use blur::BlurKernel;
pub use chain::ViewChain;
pub use resample::{
    build_downsample, build_projection, build_warp, FlowField, Homography, ProjectionSpec,
};
pub use sparse::SparseLinearMap;

use crate::error::Result;

/// Convenience wrapper around [`BlurKernel::new`].
pub fn build_blur(sigma: f64) -> Result<BlurKernel> {
    BlurKernel::new(sigma)
}

/// Assembles `A = D·K·W·P` from its factors; dimensions are inferred from `P`
/// and `D`, with the high-resolution grid given explicitly.
pub fn compose_chain(
    projection: SparseLinearMap,
    warp: SparseLinearMap,
    blur: BlurKernel,
    factor: usize,
    tex_dims: (usize, usize),
    hr_dims: (usize, usize),
) -> Result<ViewChain> {
    let downsample = build_downsample(factor, hr_dims)?;
    ViewChain::compose(
        projection,
        warp,
        blur,
        downsample,
        tex_dims,
        hr_dims,
        (hr_dims.0 / factor, hr_dims.1 / factor),
    )
}
