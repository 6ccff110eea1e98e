//! Procedural strands, basis-fitting corpora and closed-loop test scenes.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::codec::{encode_strand, Point, Strand, StrandBasis, DEFAULT_POINT_COUNT};
use crate::error::{Error, Result};
use crate::hairmap::{PcaHairMap, DEFAULT_BALD_THRESHOLD, DEFAULT_NEAREST_WEIGHT};
use crate::losses::{TargetMaps, SILHOUETTE_THRESHOLD};
use crate::model::HairModel;
use crate::render::{build_splats, reference_rasterize, RenderBuffers, RenderConfig};
use crate::scalp::{CameraModel, HeadModel};

/// Ranges the generator draws each strand's shape from.
///
/// Amplitude and droop are fractions of the strand length; frequency is in
/// wave cycles per strand.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleParams {
    pub point_count: usize,
    pub length: Range<f64>,
    pub wave_amplitude: Range<f64>,
    pub wave_frequency: Range<f64>,
    pub wave_damping: Range<f64>,
    pub droop: Range<f64>,
    /// Rise of the strand above the root's tangent plane, per unit length.
    pub lift: Range<f64>,
    /// Spread of the growth direction around straight down the scalp (radians).
    pub heading_spread: f64,
    /// Amplitude of the fine in-plane jitter, as a fraction of length.
    pub frizz: f64,
}

/// Sine modes summed for the jitter; mode `k` has amplitude `frizz / k`.
pub const FRIZZ_MODES: usize = 32;

impl Default for StyleParams {
    fn default() -> Self {
        Self {
            point_count: DEFAULT_POINT_COUNT,
            length: 0.4..0.9,
            wave_amplitude: 0.0..0.08,
            wave_frequency: 1.0..4.0,
            wave_damping: 0.0..1.5,
            droop: 0.0..0.15,
            lift: 0.25..0.35,
            heading_spread: 0.8,
            frizz: 0.003,
        }
    }
}

impl StyleParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: &Range<f64>, lo: f64| r.start.is_finite() && r.end.is_finite() && r.start >= lo && r.start <= r.end;
        if self.point_count < 3 {
            return Err(Error::InvalidInput("strands need at least 3 points".into()));
        }
        if !(ok(&self.length, 0.0) && self.length.start > 0.0) {
            return Err(Error::InvalidInput(format!("bad length range {:?}", self.length)));
        }
        if !(ok(&self.lift, 0.0) && self.lift.start > 0.0 && self.lift.end < 1.0) {
            return Err(Error::InvalidInput(format!("lift range {:?} must lie in (0, 1)", self.lift)));
        }
        if !(self.frizz.is_finite() && self.frizz >= 0.0) {
            return Err(Error::InvalidInput(format!("frizz {} must be nonnegative", self.frizz)));
        }
        for (name, r) in [
            ("wave amplitude", &self.wave_amplitude),
            ("wave frequency", &self.wave_frequency),
            ("wave damping", &self.wave_damping),
            ("droop", &self.droop),
        ] {
            if !ok(r, 0.0) {
                return Err(Error::InvalidInput(format!("bad {name} range {r:?}")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, r: &Range<f64>) -> f64 {
    if r.start == r.end {
        r.start
    } else {
        rng.random_range(r.clone())
    }
}

/// One root-local strand: root at the origin, `+z` along the scalp normal,
/// `+y` toward the crown.
///
/// The height above the tangent plane grows linearly along the strand, so
/// every point but the root lies strictly outside any convex head.
pub fn gen_strand(rng: &mut impl Rng, style: &StyleParams) -> Strand {
    let n = style.point_count;
    let len = draw(rng, &style.length);
    let lift = draw(rng, &style.lift);
    let heading = -FRAC_PI_2 + rng.random_range(-1.0..=1.0) * style.heading_spread;
    let amp = draw(rng, &style.wave_amplitude) * len;
    let freq = draw(rng, &style.wave_frequency);
    let damp = draw(rng, &style.wave_damping);
    let droop = draw(rng, &style.droop) * len;
    let phase = rng.random_range(0.0..TAU);
    let frizz: Vec<[f64; 2]> = (1..=FRIZZ_MODES)
        .map(|k| {
            let a = style.frizz * len / k as f64;
            let (u, v): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            [a * u, a * v]
        })
        .collect();

    let flat = (1.0 - lift * lift).sqrt();
    let along = Point::new(heading.cos() * flat, heading.sin() * flat, 0.0);
    let side = Point::new(-heading.sin(), heading.cos(), 0.0);
    let points = (0..n)
        .map(|j| {
            let t = j as f64 / (n - 1) as f64;
            let wave = amp * (-damp * t).exp() * ((TAU * freq * t + phase).sin() - phase.sin());
            // Half-sine modes vanish at the root, so it stays put.
            let (jx, jy) = frizz.iter().enumerate().fold((0.0, 0.0), |(x, y), (k, c)| {
                let s = (PI * (k + 1) as f64 * t).sin();
                (x + c[0] * s, y + c[1] * s)
            });
            along * (len * t) + side * wave + Point::new(jx, jy - droop * t * t, len * lift * t)
        })
        .collect();
    Strand::new(points).expect("generated points are finite")
}

/// `count` root-local strands, deterministic per seed.
pub fn gen_strand_corpus(seed: u64, count: usize, style: &StyleParams) -> Result<Vec<Strand>> {
    style.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.next_u64()).collect();
    Ok(seeds
        .par_iter()
        .map(|s| gen_strand(&mut ChaCha8Rng::seed_from_u64(*s), style))
        .collect())
}

/// Per-component mean and standard deviation of corpus coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CoefficientStats {
    pub fn from_corpus(strands: &[Strand], basis: &StrandBasis) -> Result<Self> {
        if strands.is_empty() {
            return Err(Error::Underdetermined("no strands to gather statistics from".into()));
        }
        let c = basis.num_components();
        let coeffs = strands.iter().map(|s| encode_strand(s, basis)).collect::<Result<Vec<_>>>()?;
        let n = strands.len() as f64;
        let mut mean = vec![0.0; c];
        for g in &coeffs {
            for (m, v) in mean.iter_mut().zip(&g.gamma) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for g in &coeffs {
            for k in 0..c {
                var[k] += (g.gamma[k] - mean[k]).powi(2);
            }
        }
        Ok(Self { mean, std: var.iter().map(|v| (v / n).sqrt()).collect() })
    }

    /// Zero mean and the basis' explained variance.
    pub fn from_basis(basis: &StrandBasis) -> Result<Self> {
        let var = basis
            .explained_variance()
            .ok_or_else(|| Error::InvalidInput("basis carries no explained variance".into()))?;
        Ok(Self { mean: vec![0.0; var.len()], std: var.iter().map(|v| v.max(0.0).sqrt()).collect() })
    }
}

/// Camera, grid and rendering setup for [`gen_scene`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneOptions {
    pub upsample: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    pub camera_distance: f64,
    /// Elevation range of the hemisphere camera (radians above the equator).
    pub elevation: Range<f64>,
    /// Coefficients are sampled within this many standard deviations.
    pub clip_sigma: f64,
    pub render: RenderConfig,
    pub nearest_weight: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            upsample: 2,
            image_width: 64,
            image_height: 64,
            focal_factor: 1.6,
            camera_distance: 6.0,
            elevation: 0.0..1.0,
            clip_sigma: 2.0,
            render: RenderConfig::default(),
            nearest_weight: DEFAULT_NEAREST_WEIGHT,
        }
    }
}

/// Everything needed for a closed-loop fit.
#[derive(Clone, Debug)]
pub struct Scene {
    pub truth: PcaHairMap,
    pub model: HairModel,
    pub camera: CameraModel,
    pub targets: TargetMaps,
    pub render: RenderBuffers,
}

/// Camera on the upper hemisphere around the head, looking at its center.
pub fn hemisphere_camera(rng: &mut impl Rng, head: &HeadModel, options: &SceneOptions) -> Result<CameraModel> {
    let azimuth = rng.random_range(0.0..TAU);
    let elevation = draw(rng, &options.elevation);
    CameraModel::orbit(
        head.center,
        options.camera_distance,
        azimuth,
        elevation,
        options.focal_factor * options.image_width as f64,
        options.image_width,
        options.image_height,
    )
}

/// Renders dense strands of `pca` with the reference rasterizer.
pub fn render_reference(model: &HairModel, pca: &PcaHairMap, cam: &CameraModel, config: &RenderConfig) -> Result<RenderBuffers> {
    let hair = model.forward(pca)?;
    Ok(reference_rasterize(&build_splats(&hair, config).splats, cam, config))
}

/// Supervision from a render: soft silhouette, composited directions, and
/// depth normalized to `[0, 1]` over pixels with silhouette above 0.5.
pub fn targets_from_render(render: &RenderBuffers) -> Result<TargetMaps> {
    let hair: Vec<usize> = (0..render.pixels())
        .filter(|&i| render.depth_valid[i] && render.silhouette[i] > SILHOUETTE_THRESHOLD)
        .collect();
    if hair.is_empty() {
        return Err(Error::Degenerate("render shows no hair".into()));
    }
    let lo = hair.iter().map(|&i| render.depth[i]).fold(f64::INFINITY, f64::min);
    let hi = hair.iter().map(|&i| render.depth[i]).fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let mut depth = vec![0.0; render.pixels()];
    let mut depth_valid = vec![false; render.pixels()];
    for &i in &hair {
        depth[i] = ((render.depth[i] - lo) * scale).clamp(0.0, 1.0);
        depth_valid[i] = true;
    }
    let t = TargetMaps {
        width: render.width,
        height: render.height,
        silhouette: render.silhouette.clone(),
        direction: render.direction.clone(),
        depth,
        depth_valid,
        depth_offset: lo,
        depth_scale: scale,
    };
    t.validate()?;
    Ok(t)
}

/// Random coefficient map within `clip_sigma` of `stats`, one view, and its
/// rendered targets.
///
/// A texel whose decoded strand would dip into the head is resampled; after
/// 64 failed draws it falls back to the mean coefficients.
pub fn gen_scene(
    seed: u64,
    head: &HeadModel,
    dims: (usize, usize),
    basis: &StrandBasis,
    stats: &CoefficientStats,
    options: &SceneOptions,
) -> Result<Scene> {
    head.validate()?;
    options.render.validate()?;
    let (w, h) = dims;
    let c = basis.num_components();
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::Shape("coefficient statistics do not match the basis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = PcaHairMap::bald(w, h, c);
    for t in 0..w * h {
        truth.set_baldness(t, 1.0)?;
    }
    let model = HairModel::new(basis.clone(), head.clone(), &truth, options.upsample, options.nearest_weight, DEFAULT_BALD_THRESHOLD)?;
    for t in 0..w * h {
        let (root, frame) = (model.guides.position(t), *model.guides.frame(t));
        let mut gamma = stats.mean.clone();
        for _ in 0..64 {
            let cand: Vec<f64> = (0..c)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    stats.mean[k] + z.clamp(-options.clip_sigma, options.clip_sigma) * stats.std[k]
                })
                .collect();
            let pts = model.local_points(&cand);
            if pts[1..].iter().all(|p| p.z > 0.0 && head.sdf(&(frame.to_world(p) + root)) >= 0.0) {
                gamma = cand;
                break;
            }
        }
        truth.gamma_mut(t).copy_from_slice(&gamma);
    }
    let camera = hemisphere_camera(&mut rng, head, options)?;
    let render = render_reference(&model, &truth, &camera, &options.render)?;
    let targets = targets_from_render(&render)?;
    Ok(Scene { truth, model, camera, targets, render })
}

/// Evenly spaced azimuths at a fixed elevation, for multi-view setups.
pub fn ring_cameras(head: &HeadModel, options: &SceneOptions, count: usize, elevation: f64, start: f64) -> Result<Vec<CameraModel>> {
    (0..count)
        .map(|k| {
            CameraModel::orbit(
                head.center,
                options.camera_distance,
                start + TAU * k as f64 / count as f64,
                elevation.clamp(-FRAC_PI_2 + 1e-3, FRAC_PI_2 - 1e-3),
                options.focal_factor * options.image_width as f64,
                options.image_width,
                options.image_height,
            )
        })
        .collect()
}
