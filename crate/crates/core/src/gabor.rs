//! Orientation fields from grayscale images and depth-map normalization.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};

/// Single-channel image, row-major, `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err(format!("{width}x{height} image needs {} samples, got {}", width * height, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Gabor filter bank settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaborParams {
    pub orientations: usize,
    /// Carrier wavelength in pixels.
    pub wavelength: f64,
    /// Gaussian envelope standard deviation in pixels.
    pub sigma: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self { orientations: 32, wavelength: 4.0, sigma: 2.0 }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if self.orientations < 4 {
            return Err(Error::InvalidInput("need at least 4 orientations".into()));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) || !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput("wavelength and sigma must be positive".into()));
        }
        Ok(())
    }

    /// Kernel half-width: three envelope deviations.
    pub fn radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }
}

/// Undirected orientation per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationMap {
    pub width: usize,
    pub height: usize,
    /// Strand direction in `[0, π)`, measured from +x towards +y (image rows
    /// grow downwards).
    pub angle: Vec<f64>,
    /// `(R_max - R_mean) / (R_max + δ)` over the filter bank, with `δ` a
    /// rounding floor proportional to the image magnitude.
    pub confidence: Vec<f64>,
    /// Pixels whose whole kernel window lies inside the image.
    pub mask: Vec<bool>,
}

/// Responses below this fraction of the largest possible one are noise.
const CONFIDENCE_FLOOR: f64 = 1e-9;

/// Even and odd kernels for one orientation, zero DC.
struct KernelPair {
    even: Vec<f64>,
    odd: Vec<f64>,
}

fn kernel_pair(theta: f64, p: &GaborParams) -> KernelPair {
    let r = p.radius() as isize;
    let side = (2 * r + 1) as usize;
    // The carrier runs across the strand, along the normal (-sin θ, cos θ).
    let (nx, ny) = (-theta.sin(), theta.cos());
    let mut env = Vec::with_capacity(side * side);
    let mut even = Vec::with_capacity(side * side);
    let mut odd = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (dx as f64, dy as f64);
            let g = (-(x * x + y * y) / (2.0 * p.sigma * p.sigma)).exp();
            let phase = 2.0 * PI * (x * nx + y * ny) / p.wavelength;
            env.push(g);
            even.push(g * phase.cos());
            odd.push(g * phase.sin());
        }
    }
    // Remove the even kernel's DC so flat regions and brightness offsets give no response.
    let dc = even.iter().sum::<f64>() / env.iter().sum::<f64>();
    for (e, g) in even.iter_mut().zip(&env) {
        *e -= dc * g;
    }
    KernelPair { even, odd }
}

/// Quadrature energy of one kernel pair at every pixel, edges clamped.
fn energy(image: &Image, k: &KernelPair, r: usize) -> Vec<f64> {
    let (w, h) = (image.width as isize, image.height as isize);
    let r = r as isize;
    let side = (2 * r + 1) as usize;
    (0..image.data.len())
        .map(|i| {
            let (x, y) = ((i % image.width) as isize, (i / image.width) as isize);
            let (mut re, mut im) = (0.0, 0.0);
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                let row = (dy + r) as usize * side;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let v = image.data[sy * image.width + sx];
                    let j = row + (dx + r) as usize;
                    re += k.even[j] * v;
                    im += k.odd[j] * v;
                }
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Dominant strand orientation from an oriented Gabor filter bank.
///
/// Orientation `k` of `n` is `kπ/n`; the peak is refined by a parabola
/// through its circular neighbours.
pub fn gabor_orientation(image: &Image, params: &GaborParams) -> Result<OrientationMap> {
    params.validate()?;
    let r = params.radius();
    let side = 2 * r + 1;
    if image.width < side || image.height < side {
        return Err(Error::InvalidInput(format!(
            "{}x{} image is smaller than the {side}x{side} kernel",
            image.width, image.height
        )));
    }
    if image.data.len() != image.width * image.height {
        return Err(shape_err("image data does not match its size"));
    }
    let n = params.orientations;
    let bound = kernel_pair(0.0, params).even.iter().map(|v| v.abs()).sum::<f64>()
        * image.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let delta = CONFIDENCE_FLOOR * bound + f64::MIN_POSITIVE;
    let responses: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| energy(image, &kernel_pair(k as f64 * PI / n as f64, params), r))
        .collect();

    let pixels = image.data.len();
    let mut angle = vec![0.0; pixels];
    let mut confidence = vec![0.0; pixels];
    let mut mask = vec![false; pixels];
    for i in 0..pixels {
        let mut best = 0;
        let mut sum = 0.0;
        for k in 0..n {
            let v = responses[k][i];
            sum += v;
            if v > responses[best][i] {
                best = k;
            }
        }
        let peak = responses[best][i];
        let prev = responses[(best + n - 1) % n][i];
        let next = responses[(best + 1) % n][i];
        let curve = prev - 2.0 * peak + next;
        let offset = if curve < 0.0 { (0.5 * (prev - next) / curve).clamp(-0.5, 0.5) } else { 0.0 };
        angle[i] = ((best as f64 + offset) * PI / n as f64).rem_euclid(PI);
        // rem_euclid can return exactly π for tiny negative inputs.
        if angle[i] >= PI {
            angle[i] = 0.0;
        }
        confidence[i] = (peak - sum / n as f64) / (peak + delta);
        let (x, y) = (i % image.width, i / image.width);
        mask[i] = x >= r && y >= r && x + r < image.width && y + r < image.height;
    }
    Ok(OrientationMap { width: image.width, height: image.height, angle, confidence, mask })
}

/// Normalized depth and the pixels it is defined on.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDepth {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Clip bounds, the 2nd and 98th percentiles of the eroded region.
    pub low: f64,
    pub high: f64,
}

pub const DEPTH_LOW_QUANTILE: f64 = 0.02;
pub const DEPTH_HIGH_QUANTILE: f64 = 0.98;

/// Erodes a mask with a `(2r+1)²` square; pixels near the border are dropped.
pub fn erode(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    // Separable: a pixel survives if its row window and then column window are all set.
    let rows: Vec<bool> = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            x >= radius && x + radius < width && (x - radius..=x + radius).all(|sx| mask[y * width + sx])
        })
        .collect();
    (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            y >= radius && y + radius < height && (y - radius..=y + radius).all(|sy| rows[sy * width + x])
        })
        .collect()
}

/// Linear-interpolated quantile of `values` (reordered in place), matching the
/// usual `(n - 1)·q` position rule.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    let n = values.len();
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut a, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return a;
    }
    let b = upper.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// Erode the hair mask, clip depth to its 2nd/98th percentiles and rescale to
/// `[0, 1]`. A zero-width clip range maps everything to 0.
pub fn depth_normalize(depth: &Image, mask: &[bool], erode_radius: usize) -> Result<NormalizedDepth> {
    if mask.len() != depth.data.len() || depth.data.len() != depth.width * depth.height {
        return Err(shape_err("depth and mask sizes differ"));
    }
    let valid = erode(mask, depth.width, depth.height, erode_radius);
    let mut inside: Vec<f64> = depth.data.iter().zip(&valid).filter(|(_, v)| **v).map(|(d, _)| *d).collect();
    if inside.is_empty() {
        return Err(Error::Degenerate("no pixels left after eroding the mask".into()));
    }
    if inside.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("depth is not finite inside the mask".into()));
    }
    let low = quantile(&mut inside, DEPTH_LOW_QUANTILE);
    let high = quantile(&mut inside, DEPTH_HIGH_QUANTILE);
    let range = high - low;
    let values = depth
        .data
        .iter()
        .zip(&valid)
        .map(|(d, v)| if *v && range > 0.0 { (d.clamp(low, high) - low) / range } else { 0.0 })
        .collect();
    Ok(NormalizedDepth { width: depth.width, height: depth.height, values, valid, low, high })
}
