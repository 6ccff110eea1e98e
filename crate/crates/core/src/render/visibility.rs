use std::collections::HashMap;

use super::raster::{rasterize, RenderBuffers};
use super::splat::{build_splats, RenderConfig, StrandSplat};
use crate::hairmap::HairMap;
use crate::scalp::CameraModel;

pub const VISIBLE_WEIGHT: f64 = 3.0;
pub const HIDDEN_WEIGHT: f64 = 1.0;
/// Minimum transmittance in front of a splat for its points to count as visible.
pub const VISIBLE_TRANSMITTANCE: f64 = 0.5;

/// Per-point weights, `3` for points seen by `cam` and `1` otherwise.
///
/// A point is visible when it projects inside the image and the splat of its
/// segment (the last point uses the last segment) contributes at the point's
/// pixel with transmittance at least 0.5 in front of it. A strand never
/// occludes itself: neighbouring segments share endpoints and would otherwise
/// hide each other's points.
pub fn visibility_weights(hair: &HairMap, cam: &CameraModel, config: &RenderConfig) -> Vec<Option<Vec<f64>>> {
    let set = build_splats(hair, config);
    let buffers = rasterize(&set.splats, cam, config);
    let lookup: HashMap<(usize, usize), usize> =
        set.splats.iter().enumerate().map(|(i, s)| ((s.texel, s.index), i)).collect();
    hair.strands()
        .iter()
        .enumerate()
        .map(|(texel, strand)| {
            strand.as_ref().map(|s| {
                let last_seg = s.len() - 2;
                s.points()
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let Some(&splat) = lookup.get(&(texel, j.min(last_seg))) else { return HIDDEN_WEIGHT };
                        let pr = cam.project(p);
                        if !pr.valid {
                            return HIDDEN_WEIGHT;
                        }
                        let (x, y) = (pr.pixel.x.floor(), pr.pixel.y.floor());
                        if x < 0.0 || y < 0.0 || x >= cam.width as f64 || y >= cam.height as f64 {
                            return HIDDEN_WEIGHT;
                        }
                        match transmittance_before(&buffers, &set.splats, splat, x as usize, y as usize) {
                            Some(t) if t >= VISIBLE_TRANSMITTANCE => VISIBLE_WEIGHT,
                            _ => HIDDEN_WEIGHT,
                        }
                    })
                    .collect()
            })
        })
        .collect()
}

/// Transmittance from other strands in front of `splat` at a pixel, if the
/// splat contributes there.
pub fn transmittance_before(
    buffers: &RenderBuffers,
    splats: &[StrandSplat],
    splat: usize,
    px: usize,
    py: usize,
) -> Option<f64> {
    let trace = buffers.trace.as_ref()?;
    let tile = trace
        .tiles
        .iter()
        .find(|t| px >= t.x0 && px < t.x0 + t.width && py >= t.y0 && py < t.y0 + t.height)?;
    let k = (py - tile.y0) * tile.width + (px - tile.x0);
    let mut t = 1.0;
    for &(local, a) in &tile.entries[tile.offsets[k] as usize..tile.offsets[k + 1] as usize] {
        let other = trace.projected[tile.splats[local as usize] as usize].splat;
        if other == splat {
            return Some(t);
        }
        if splats[other].texel != splats[splat].texel {
            t *= 1.0 - a;
        }
    }
    None
}
