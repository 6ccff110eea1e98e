//! Forward rasterization.
//!
//! Each splat is projected with the first-order perspective (EWA) mapping
//! `Σ₂ = J W C Wᵀ Jᵀ + blur·I`, evaluated at pixel centers `(i + 0.5, j + 0.5)`
//! with `α = opacity · exp(-½ m²)` for `m ≤ cutoff`, and composited front to
//! back in order of camera depth of the splat mean (ties by splat index).
//!
//! Buffers: silhouette `s = Σ Tᵢαᵢ = 1 - Π(1 - αᵢ)`, direction `Σ Tᵢαᵢ dᵢ` (unnormalized, so
//! `|b| ≤ s`), depth `Σ Tᵢαᵢ zᵢ / s` where `s > 0`.

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use super::splat::{RenderConfig, StrandSplat};
use crate::scalp::{CameraModel, NEAR_PLANE};

pub const TILE_SIZE: usize = 16;

/// Screen-space footprint of one splat.
#[derive(Clone, Debug)]
pub struct ProjectedSplat {
    /// Index into the splat slice.
    pub splat: usize,
    pub camera_pos: Vector3<f64>,
    pub center: Vector2<f64>,
    pub depth: f64,
    /// `J W`, the linearized world-to-pixel map at the mean.
    pub jw: Matrix2x3<f64>,
    pub cov2: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// Screen tangent before normalization and its unit version.
    pub tangent2: Vector2<f64>,
    pub dir2: Vector2<f64>,
}

pub fn project_splat(index: usize, splat: &StrandSplat, cam: &CameraModel, config: &RenderConfig) -> Option<ProjectedSplat> {
    let xc = cam.to_camera(&splat.mean);
    if xc.z <= NEAR_PLANE {
        return None;
    }
    let j = cam.projection_jacobian(&xc);
    let jw = j * cam.rotation;
    let cov2 = jw * splat.covariance * jw.transpose() + Matrix2::identity() * config.screen_blur;
    let conic = cov2.try_inverse()?;
    if !(cov2.determinant() > 0.0) {
        return None;
    }
    let center = Vector2::new(cam.fx * xc.x / xc.z + cam.cx, cam.fy * xc.y / xc.z + cam.cy);
    let tangent2 = jw * splat.direction;
    let tn = tangent2.norm();
    let dir2 = if tn > 1e-12 { tangent2 / tn } else { Vector2::zeros() };
    Some(ProjectedSplat { splat: index, camera_pos: xc, center, depth: xc.z, jw, cov2, conic, tangent2, dir2 })
}

/// Opacity of `p` at pixel `(px, py)`, zero outside the cutoff.
#[inline]
pub fn splat_alpha(p: &ProjectedSplat, px: usize, py: usize, config: &RenderConfig) -> f64 {
    let d = Vector2::new(px as f64 + 0.5 - p.center.x, py as f64 + 0.5 - p.center.y);
    let q = p.conic[(0, 0)] * d.x * d.x + 2.0 * p.conic[(0, 1)] * d.x * d.y + p.conic[(1, 1)] * d.y * d.y;
    if q > config.cutoff * config.cutoff {
        return 0.0;
    }
    config.opacity * (-0.5 * q).exp()
}

fn depth_order(a: &ProjectedSplat, b: &ProjectedSplat) -> Ordering {
    a.depth.partial_cmp(&b.depth).unwrap_or(Ordering::Equal).then(a.splat.cmp(&b.splat))
}

/// Per-pixel contributor lists for a rectangular image region.
#[derive(Clone, Debug)]
pub struct TileTrace {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Indices into the projected list, front to back.
    pub splats: Vec<u32>,
    /// CSR offsets into `entries`, one range per pixel (row-major in the tile).
    pub offsets: Vec<u32>,
    /// `(position in splats, α)` in compositing order.
    pub entries: Vec<(u32, f64)>,
}

/// State kept from the forward pass for differentiation.
#[derive(Clone, Debug)]
pub struct RenderTrace {
    pub projected: Vec<ProjectedSplat>,
    pub tiles: Vec<TileTrace>,
    pub num_splats: usize,
}

#[derive(Clone, Debug)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub silhouette: Vec<f64>,
    pub direction: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
    pub depth_valid: Vec<bool>,
    pub trace: Option<RenderTrace>,
}

impl RenderBuffers {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            silhouette: vec![0.0; n],
            direction: vec![[0.0; 2]; n],
            depth: vec![0.0; n],
            depth_valid: vec![false; n],
            trace: None,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Copy without the backward trace.
    pub fn without_trace(&self) -> Self {
        Self { trace: None, ..self.clone() }
    }

    /// Largest absolute difference over all three buffers (depth compared
    /// where both are valid; validity must agree).
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.pixels() {
            worst = worst.max((self.silhouette[i] - other.silhouette[i]).abs());
            worst = worst.max((self.direction[i][0] - other.direction[i][0]).abs());
            worst = worst.max((self.direction[i][1] - other.direction[i][1]).abs());
            if self.depth_valid[i] != other.depth_valid[i] {
                return f64::INFINITY;
            }
            if self.depth_valid[i] {
                worst = worst.max((self.depth[i] - other.depth[i]).abs());
            }
        }
        worst
    }
}

struct PixelOut {
    silhouette: f64,
    weight: f64,
    direction: [f64; 2],
    depth_num: f64,
}

fn composite<'a>(contribs: impl Iterator<Item = (&'a ProjectedSplat, f64)>) -> PixelOut {
    let mut t = 1.0;
    let mut out = PixelOut { silhouette: 0.0, weight: 0.0, direction: [0.0; 2], depth_num: 0.0 };
    for (p, a) in contribs {
        let w = t * a;
        out.weight += w;
        out.direction[0] += w * p.dir2.x;
        out.direction[1] += w * p.dir2.y;
        out.depth_num += w * p.depth;
        t *= 1.0 - a;
    }
    // Same value as the weight sum, but cannot round past 1.
    out.silhouette = 1.0 - t;
    out
}

fn write_pixel(buf: &mut RenderBuffers, idx: usize, px: PixelOut) {
    buf.silhouette[idx] = px.silhouette;
    buf.direction[idx] = px.direction;
    if px.weight > 0.0 {
        buf.depth[idx] = px.depth_num / px.weight;
        buf.depth_valid[idx] = true;
    }
}

fn project_all(splats: &[StrandSplat], cam: &CameraModel, config: &RenderConfig) -> Vec<ProjectedSplat> {
    splats
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| project_splat(i, s, cam, config))
        .collect()
}

/// Front-to-back order; sorting compact keys keeps this cheap for large scenes.
fn sort_by_depth(projected: Vec<ProjectedSplat>) -> Vec<ProjectedSplat> {
    // Depths are past the near plane, so their bit patterns order like the values.
    let mut keys: Vec<(u64, usize, usize)> = projected.iter().enumerate().map(|(k, p)| (p.depth.to_bits(), p.splat, k)).collect();
    keys.par_sort_unstable();
    let mut slots: Vec<Option<ProjectedSplat>> = projected.into_iter().map(Some).collect();
    keys.iter().map(|k| slots[k.2].take().expect("each splat taken once")).collect()
}

/// Inclusive pixel range `[lo, hi]` whose centers can lie within the cutoff.
fn pixel_range(center: f64, var: f64, cutoff: f64, size: usize) -> Option<(usize, usize)> {
    if !cutoff.is_finite() {
        return Some((0, size - 1));
    }
    // Small margin so rounding never drops a pixel the exact test would keep.
    let r = cutoff * var.sqrt() * (1.0 + 1e-9) + 1e-9;
    let lo = (center - r - 0.5).ceil().max(0.0);
    let hi = (center + r - 0.5).floor().min(size as f64 - 1.0);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Tiled rasterizer that keeps the backward trace.
pub fn rasterize(splats: &[StrandSplat], cam: &CameraModel, config: &RenderConfig) -> RenderBuffers {
    let (w, h) = (cam.width, cam.height);
    let projected = sort_by_depth(project_all(splats, cam, config));

    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (pi, p) in projected.iter().enumerate() {
        let Some((x0, x1)) = pixel_range(p.center.x, p.cov2[(0, 0)], config.cutoff, w) else { continue };
        let Some((y0, y1)) = pixel_range(p.center.y, p.cov2[(1, 1)], config.cutoff, h) else { continue };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tile_lists[ty * tiles_x + tx].push(pi as u32);
            }
        }
    }

    let tiles: Vec<(TileTrace, Vec<PixelOut>)> = tile_lists
        .into_par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let x0 = (ti % tiles_x) * TILE_SIZE;
            let y0 = (ti / tiles_x) * TILE_SIZE;
            let tw = TILE_SIZE.min(w - x0);
            let th = TILE_SIZE.min(h - y0);
            // Scatter each splat over its footprint; the list is depth sorted,
            // so every pixel's hits come out front to back.
            let mut hits: Vec<Vec<(u32, f64)>> = vec![Vec::new(); tw * th];
            for (local, &pi) in list.iter().enumerate() {
                let p = &projected[pi as usize];
                let (Some((sx0, sx1)), Some((sy0, sy1))) = (
                    pixel_range(p.center.x, p.cov2[(0, 0)], config.cutoff, w),
                    pixel_range(p.center.y, p.cov2[(1, 1)], config.cutoff, h),
                ) else {
                    continue;
                };
                for py in sy0.max(y0)..=sy1.min(y0 + th - 1) {
                    for px in sx0.max(x0)..=sx1.min(x0 + tw - 1) {
                        let a = splat_alpha(p, px, py, config);
                        if a > 0.0 {
                            hits[(py - y0) * tw + px - x0].push((local as u32, a));
                        }
                    }
                }
            }
            let mut offsets = Vec::with_capacity(tw * th + 1);
            let mut entries = Vec::with_capacity(hits.iter().map(Vec::len).sum());
            let mut pixels = Vec::with_capacity(tw * th);
            offsets.push(0u32);
            for pixel in &hits {
                pixels.push(composite(pixel.iter().map(|&(l, a)| (&projected[list[l as usize] as usize], a))));
                entries.extend_from_slice(pixel);
                offsets.push(entries.len() as u32);
            }
            (TileTrace { x0, y0, width: tw, height: th, splats: list, offsets, entries }, pixels)
        })
        .collect();

    let mut buf = RenderBuffers::zeros(w, h);
    let mut traces = Vec::with_capacity(tiles.len());
    for (tile, pixels) in tiles {
        for (k, px) in pixels.into_iter().enumerate() {
            let idx = (tile.y0 + k / tile.width) * w + tile.x0 + k % tile.width;
            write_pixel(&mut buf, idx, px);
        }
        traces.push(tile);
    }
    buf.trace = Some(RenderTrace { projected, tiles: traces, num_splats: splats.len() });
    buf
}

/// Brute-force renderer: every splat tested at every pixel, contributors
/// sorted per pixel. The trace is a single whole-image tile.
pub fn reference_rasterize(splats: &[StrandSplat], cam: &CameraModel, config: &RenderConfig) -> RenderBuffers {
    let (w, h) = (cam.width, cam.height);
    let projected = project_all(splats, cam, config);
    let mut buf = RenderBuffers::zeros(w, h);
    let mut offsets = vec![0u32];
    let mut entries = Vec::new();
    // Rank of each projected splat in depth order, used as the tile-local index.
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| depth_order(&projected[a], &projected[b]));
    let mut rank = vec![0u32; projected.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u32;
    }
    for py in 0..h {
        for px in 0..w {
            let mut hits: Vec<(usize, f64)> = projected
                .iter()
                .enumerate()
                .map(|(i, p)| (i, splat_alpha(p, px, py, config)))
                .filter(|&(_, a)| a > 0.0)
                .collect();
            hits.sort_by(|a, b| depth_order(&projected[a.0], &projected[b.0]));
            write_pixel(&mut buf, py * w + px, composite(hits.iter().map(|&(i, a)| (&projected[i], a))));
            entries.extend(hits.iter().map(|&(i, a)| (rank[i], a)));
            offsets.push(entries.len() as u32);
        }
    }
    let tile = TileTrace {
        x0: 0,
        y0: 0,
        width: w,
        height: h,
        splats: order.iter().map(|&i| i as u32).collect(),
        offsets,
        entries,
    };
    buf.trace = Some(RenderTrace { projected, tiles: vec![tile], num_splats: splats.len() });
    buf
}
