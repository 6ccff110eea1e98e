//! Reverse-mode gradients of the rasterizer w.r.t. strand points.
//!
//! The depth order is held fixed. Per pixel the contributor list is walked
//! back to front with a running suffix composite, so no division by `1 - α`
//! is needed and fully opaque splats are handled exactly.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::raster::{ProjectedSplat, RenderBuffers};
use super::splat::{RenderConfig, StrandSplat};
use crate::codec::Point;
use crate::error::{Error, Result};
use crate::hairmap::HairMap;
use crate::scalp::CameraModel;

/// Upstream gradients of a scalar loss w.r.t. each output buffer.
#[derive(Clone, Debug)]
pub struct PixelGradients {
    pub silhouette: Vec<f64>,
    pub direction: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
}

impl PixelGradients {
    pub fn zeros(pixels: usize) -> Self {
        Self { silhouette: vec![0.0; pixels], direction: vec![[0.0; 2]; pixels], depth: vec![0.0; pixels] }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.silhouette.iter_mut().zip(&other.silhouette) {
            *a += scale * b;
        }
        for (a, b) in self.direction.iter_mut().zip(&other.direction) {
            a[0] += scale * b[0];
            a[1] += scale * b[1];
        }
        for (a, b) in self.depth.iter_mut().zip(&other.depth) {
            *a += scale * b;
        }
    }
}

/// Gradients w.r.t. the screen-space parameters of one projected splat.
#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad {
    center: Vector2<f64>,
    /// Entry-wise gradient w.r.t. the (symmetric) conic matrix.
    conic: Matrix2<f64>,
    dir: Vector2<f64>,
    depth: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.center += o.center;
        self.conic += o.conic;
        self.dir += o.dir;
        self.depth += o.depth;
    }
}

/// Per-point gradient, laid out like the hair map it was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGradients {
    pub per_texel: Vec<Option<Vec<Vector3<f64>>>>,
}

impl PointGradients {
    pub fn zeros_like(hair: &HairMap) -> Self {
        Self {
            per_texel: hair.strands().iter().map(|s| s.as_ref().map(|s| vec![Vector3::zeros(); s.len()])).collect(),
        }
    }

    pub fn get(&self, texel: usize, j: usize) -> Vector3<f64> {
        self.per_texel[texel].as_ref().map_or(Vector3::zeros(), |v| v[j])
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.per_texel.iter_mut().zip(&other.per_texel) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y * scale;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.per_texel.iter().flatten().flatten().map(|g| g.amax()).fold(0.0, f64::max)
    }
}

/// Gradient of the segment's splat parameters w.r.t. its two endpoints.
#[derive(Clone, Copy, Debug)]
pub struct SegmentGrad {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
}

/// Chain rule from screen-space gradients back to the segment endpoints.
fn splat_backward(p: &ProjectedSplat, s: &StrandSplat, g: &ScreenGrad, cam: &CameraModel, config: &RenderConfig) -> SegmentGrad {
    let a = p.conic;
    // dA = -A dΣ A
    let g_cov2 = -(a * g.conic * a);
    let m = p.jw;
    let c = s.covariance;
    let g_cov3: Matrix3<f64> = m.transpose() * g_cov2 * m;
    let mut g_m: Matrix2x3<f64> = 2.0 * g_cov2 * m * c;

    // Screen direction d = t/|t|, t = M b.
    let tn = p.tangent2.norm();
    let mut g_b = Vector3::zeros();
    if tn > 1e-12 {
        let g_t = (g.dir - p.dir2 * p.dir2.dot(&g.dir)) / tn;
        g_m += g_t * s.direction.transpose();
        g_b = m.transpose() * g_t;
    }

    let g_j = g_m * cam.rotation.transpose();
    let xc = p.camera_pos;
    let (x, y, z) = (xc.x, xc.y, xc.z);
    let iz2 = 1.0 / (z * z);
    let iz3 = iz2 / z;
    let j = cam.projection_jacobian(&xc);
    let mut g_xc = j.transpose() * g.center;
    g_xc.z += g.depth;
    g_xc.x += g_j[(0, 2)] * (-cam.fx * iz2);
    g_xc.y += g_j[(1, 2)] * (-cam.fy * iz2);
    g_xc.z += g_j[(0, 0)] * (-cam.fx * iz2)
        + g_j[(0, 2)] * (2.0 * cam.fx * x * iz3)
        + g_j[(1, 1)] * (-cam.fy * iz2)
        + g_j[(1, 2)] * (2.0 * cam.fy * y * iz3);
    let g_mean = cam.rotation.transpose() * g_xc;

    // C = ws² v vᵀ + ε² (I - v vᵀ / |v|²)
    let v = s.segment;
    let vv = v.norm_squared();
    let gs = 0.5 * (g_cov3 + g_cov3.transpose());
    let gv_c = gs * v;
    let eps2 = config.epsilon * config.epsilon;
    let mut g_v = gv_c * (2.0 * config.width_scale * config.width_scale)
        - (gv_c * (2.0 / vv) - v * (2.0 * v.dot(&gv_c) / (vv * vv))) * eps2;
    // b = v / |v|
    let b = s.direction;
    g_v += (g_b - b * b.dot(&g_b)) / vv.sqrt();

    SegmentGrad { start: g_mean * 0.5 - g_v, end: g_mean * 0.5 + g_v }
}

/// Accumulated screen-space gradients per projected splat.
fn screen_gradients(buffers: &RenderBuffers, upstream: &PixelGradients) -> Result<Vec<ScreenGrad>> {
    let trace = buffers
        .trace
        .as_ref()
        .ok_or_else(|| Error::State("render buffers carry no contributor lists".into()))?;
    let n = buffers.pixels();
    if upstream.silhouette.len() != n || upstream.direction.len() != n || upstream.depth.len() != n {
        return Err(Error::Shape("upstream gradient size does not match the image".into()));
    }
    let w = buffers.width;
    let projected = &trace.projected;

    let partials: Vec<Vec<ScreenGrad>> = trace
        .tiles
        .par_iter()
        .map(|tile| {
            let mut acc = vec![ScreenGrad::default(); tile.splats.len()];
            let mut trans = Vec::new();
            for k in 0..tile.width * tile.height {
                let (px, py) = (tile.x0 + k % tile.width, tile.y0 + k / tile.width);
                let idx = py * w + px;
                let range = tile.offsets[k] as usize..tile.offsets[k + 1] as usize;
                if range.is_empty() {
                    continue;
                }
                let entries = &tile.entries[range];
                trans.clear();
                let mut t = 1.0;
                let mut wsum = 0.0;
                for &(_, a) in entries {
                    trans.push(t);
                    wsum += t * a;
                    t *= 1.0 - a;
                }
                // depth = D / W with W = Σ Tα, which equals s.
                let (mut g_s, g_dir) = (upstream.silhouette[idx], upstream.direction[idx]);
                let mut g_dnum = 0.0;
                if buffers.depth_valid[idx] && upstream.depth[idx] != 0.0 {
                    g_dnum = upstream.depth[idx] / wsum;
                    g_s -= upstream.depth[idx] * buffers.depth[idx] / wsum;
                }
                if g_s == 0.0 && g_dir == [0.0, 0.0] && g_dnum == 0.0 {
                    continue;
                }
                // Suffix composite of (1, dx, dy, z) behind the current splat.
                let mut suffix = [0.0f64; 4];
                for (e, &(local, a)) in entries.iter().enumerate().rev() {
                    let p = &projected[tile.splats[local as usize] as usize];
                    let c = [1.0, p.dir2.x, p.dir2.y, p.depth];
                    let g = [g_s, g_dir[0], g_dir[1], g_dnum];
                    let ti = trans[e];
                    let g_alpha: f64 = ti * (0..4).map(|ch| g[ch] * (c[ch] - suffix[ch])).sum::<f64>();
                    let ta = ti * a;
                    let slot = &mut acc[local as usize];
                    slot.dir.x += ta * g[1];
                    slot.dir.y += ta * g[2];
                    slot.depth += ta * g[3];

                    // α = o exp(-q/2), q = dᵀ A d, d = pixel - center.
                    let g_q = -0.5 * a * g_alpha;
                    let d = Vector2::new(px as f64 + 0.5 - p.center.x, py as f64 + 0.5 - p.center.y);
                    slot.center += -2.0 * g_q * (p.conic * d);
                    slot.conic += g_q * d * d.transpose();

                    for ch in 0..4 {
                        suffix[ch] = a * c[ch] + (1.0 - a) * suffix[ch];
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![ScreenGrad::default(); projected.len()];
    for (tile, part) in trace.tiles.iter().zip(&partials) {
        for (local, g) in part.iter().enumerate() {
            total[tile.splats[local] as usize].add(g);
        }
    }
    Ok(total)
}

/// Per-splat endpoint gradients, indexed like `splats`.
pub fn splat_gradients(
    buffers: &RenderBuffers,
    splats: &[StrandSplat],
    cam: &CameraModel,
    config: &RenderConfig,
    upstream: &PixelGradients,
) -> Result<Vec<SegmentGrad>> {
    let screen = screen_gradients(buffers, upstream)?;
    let trace = buffers.trace.as_ref().expect("checked in screen_gradients");
    if trace.num_splats != splats.len() {
        return Err(Error::State("splat list does not match the rendered trace".into()));
    }
    let per_projected: Vec<(usize, SegmentGrad)> = trace
        .projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, g)| (p.splat, splat_backward(p, &splats[p.splat], g, cam, config)))
        .collect();
    let zero = SegmentGrad { start: Vector3::zeros(), end: Vector3::zeros() };
    let mut out = vec![zero; splats.len()];
    for (i, g) in per_projected {
        out[i] = g;
    }
    Ok(out)
}

/// Gradient of a pixel-space loss w.r.t. every strand point of `hair`.
pub fn rasterize_backward(
    buffers: &RenderBuffers,
    hair: &HairMap,
    splats: &[StrandSplat],
    cam: &CameraModel,
    config: &RenderConfig,
    upstream: &PixelGradients,
) -> Result<PointGradients> {
    let per_splat = splat_gradients(buffers, splats, cam, config, upstream)?;
    let mut out = PointGradients::zeros_like(hair);
    for (s, g) in splats.iter().zip(&per_splat) {
        let pts = out.per_texel[s.texel]
            .as_mut()
            .ok_or_else(|| Error::State(format!("splat refers to bald texel {}", s.texel)))?;
        pts[s.index] += g.start;
        pts[s.index + 1] += g.end;
    }
    Ok(out)
}

/// Convenience for tests and tools: point gradient as a flat `Vec<Point>` per texel.
pub fn flatten_gradients(g: &PointGradients) -> Vec<Point> {
    g.per_texel.iter().flatten().flatten().copied().collect()
}
