//! Differentiable strand rasterization with line-constrained 3D Gaussians.

mod backward;
mod raster;
mod splat;
mod visibility;

pub use backward::{flatten_gradients, rasterize_backward, splat_gradients, PixelGradients, PointGradients, SegmentGrad};
pub use raster::{
    project_splat, rasterize, reference_rasterize, splat_alpha, ProjectedSplat, RenderBuffers, RenderTrace, TileTrace,
    TILE_SIZE,
};
pub use splat::{build_splats, segment_splat, tbn, RenderConfig, SplatSet, StrandSplat};
pub use visibility::{transmittance_before, visibility_weights, HIDDEN_WEIGHT, VISIBLE_TRANSMITTANCE, VISIBLE_WEIGHT};

#[cfg(test)]
mod tests;
