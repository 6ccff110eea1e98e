use nalgebra::{Matrix3, Vector3};

use crate::codec::{Point, DEGENERATE_SEGMENT};
use crate::hairmap::HairMap;

/// Splat shape and compositing parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    /// Major-axis standard deviation as a fraction of segment length.
    pub width_scale: f64,
    /// Minor-axis standard deviation, scene units.
    pub epsilon: f64,
    /// Base opacity of every splat.
    pub opacity: f64,
    /// Mahalanobis radius beyond which a splat contributes nothing.
    pub cutoff: f64,
    /// Screen-space low-pass variance added to every projected footprint, px².
    pub screen_blur: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width_scale: 0.5, epsilon: 0.00035, opacity: 0.95, cutoff: 3.0, screen_blur: 0.3 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.epsilon > 0.0) || !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(crate::Error::InvalidInput("render config needs epsilon > 0 and opacity in (0, 1]".into()));
        }
        if !(self.width_scale > 0.0) || !(self.cutoff > 0.0) || !(self.screen_blur >= 0.0) {
            return Err(crate::Error::InvalidInput("render config has a non-positive width, cutoff or blur".into()));
        }
        Ok(())
    }
}

/// A 3D Gaussian constrained to one strand segment.
#[derive(Clone, Debug, PartialEq)]
pub struct StrandSplat {
    pub mean: Point,
    pub covariance: Matrix3<f64>,
    pub direction: Vector3<f64>,
    /// Segment vector `p[j+1] - p[j]`.
    pub segment: Vector3<f64>,
    pub texel: usize,
    /// Index of the segment's first point.
    pub index: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SplatSet {
    pub splats: Vec<StrandSplat>,
    /// Degenerate segments that produced no splat.
    pub skipped: usize,
}

/// Completes `b` to an orthonormal `(b, t, n)`.
pub fn tbn(b: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let bz = b.cross(&Vector3::z());
    let t = if bz.norm() < 1e-6 { b.cross(&Vector3::x()).normalize() } else { bz.normalize() };
    let n = b.cross(&t);
    (t, n)
}

/// Gaussian for the segment `p0 -> p1`, or `None` if the segment is degenerate.
pub fn segment_splat(p0: &Point, p1: &Point, config: &RenderConfig, texel: usize, index: usize) -> Option<StrandSplat> {
    let v = p1 - p0;
    let len = v.norm();
    if len < DEGENERATE_SEGMENT {
        return None;
    }
    let b = v / len;
    let (t, n) = tbn(&b);
    let e = Matrix3::from_columns(&[b, t, n]);
    let d = Matrix3::from_diagonal(&Vector3::new(config.width_scale * len, config.epsilon, config.epsilon));
    let ed = e * d;
    Some(StrandSplat {
        mean: (p0 + p1) * 0.5,
        covariance: ed * ed.transpose(),
        direction: b,
        segment: v,
        texel,
        index,
    })
}

/// One splat per non-degenerate segment of every active strand.
pub fn build_splats(hair: &HairMap, config: &RenderConfig) -> SplatSet {
    let mut set = SplatSet::default();
    for (texel, strand) in hair.active() {
        for (j, w) in strand.points().windows(2).enumerate() {
            match segment_splat(&w[0], &w[1], config, texel, j) {
                Some(s) => set.splats.push(s),
                None => set.skipped += 1,
            }
        }
    }
    set
}
