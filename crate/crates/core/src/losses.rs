//! Geometry, rendering and penetration losses with analytic gradients.

use std::f64::consts::FRAC_PI_2;

use crate::codec::{segment_directions, Point, Strand, DEGENERATE_SEGMENT};
use crate::error::{shape_err, Error, Result};
use crate::hairmap::{HairMap, PcaHairMap};
use crate::render::{PixelGradients, PointGradients, RenderBuffers};
use crate::scalp::HeadModel;

/// Target silhouettes above this count as hair for depth and IoU.
pub const SILHOUETTE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_pca: f64,
    pub lambda_dir: f64,
    pub lambda_curv: f64,
    pub lambda_mask: f64,
    pub lambda_seg: f64,
    pub lambda_dirmap: f64,
    pub lambda_pen: f64,
    pub lambda_depth: f64,
    pub mixing_rate_r: f64,
}

impl LossWeights {
    pub const ZERO: Self = Self {
        lambda_pca: 0.0,
        lambda_dir: 0.0,
        lambda_curv: 0.0,
        lambda_mask: 0.0,
        lambda_seg: 0.0,
        lambda_dirmap: 0.0,
        lambda_pen: 0.0,
        lambda_depth: 0.0,
        mixing_rate_r: 0.0,
    };

    /// Prior training, coarse stage.
    pub fn coarse() -> Self {
        Self { lambda_pca: 0.1, lambda_dir: 0.1, lambda_curv: 1.0, lambda_mask: 0.0001, ..Self::ZERO }
    }

    /// Prior training, fine stage.
    pub fn fine() -> Self {
        Self { lambda_pca: 10.0, lambda_dir: 0.1, lambda_curv: 0.1, lambda_mask: 0.0001, ..Self::ZERO }
    }

    /// Prior training, coarse and fine branches together.
    pub fn joint() -> Self {
        Self { lambda_pca: 1.0, ..Self::fine() }
    }

    /// Hybrid synthetic + real training.
    pub fn hybrid() -> Self {
        Self {
            lambda_pca: 0.1,
            lambda_seg: 10.0,
            lambda_dirmap: 5.0,
            lambda_pen: 0.1,
            lambda_depth: 0.01,
            mixing_rate_r: 0.5,
            ..Self::fine()
        }
    }

    /// Fitting a hair map to images.
    pub fn inversion() -> Self {
        Self { lambda_seg: 1.0, lambda_dirmap: 0.8, lambda_pen: 0.3, lambda_depth: 0.01, ..Self::ZERO }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_pca,
            self.lambda_dir,
            self.lambda_curv,
            self.lambda_mask,
            self.lambda_seg,
            self.lambda_dirmap,
            self.lambda_pen,
            self.lambda_depth,
            self.mixing_rate_r,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::inversion()
    }
}

/// Supervision for one view.
///
/// Depth values are normalized; a rendered camera depth `z` is compared as
/// `(z - depth_offset) * depth_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMaps {
    pub width: usize,
    pub height: usize,
    pub silhouette: Vec<f64>,
    pub direction: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
    pub depth_valid: Vec<bool>,
    pub depth_offset: f64,
    pub depth_scale: f64,
}

impl TargetMaps {
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(Error::InvalidInput("empty target maps".into()));
        }
        if self.silhouette.len() != n || self.direction.len() != n || self.depth.len() != n || self.depth_valid.len() != n {
            return Err(shape_err(format!("target buffers do not match {}x{}", self.width, self.height)));
        }
        for i in 0..n {
            let s = self.silhouette[i];
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!("target silhouette {s} outside [0, 1] at pixel {i}")));
            }
            let [x, y] = self.direction[i];
            let norm = (x * x + y * y).sqrt();
            if !(norm <= 1.0 + 1e-9) {
                return Err(Error::InvalidInput(format!("target direction longer than 1 at pixel {i}")));
            }
            if s == 0.0 && norm != 0.0 {
                return Err(Error::InvalidInput(format!("target direction set off-hair at pixel {i}")));
            }
        }
        if !(self.depth_scale.is_finite() && self.depth_offset.is_finite()) {
            return Err(Error::InvalidInput("depth normalization must be finite".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn check(&self, render: &RenderBuffers) -> Result<()> {
        if render.width != self.width || render.height != self.height {
            return Err(shape_err(format!(
                "render is {}x{} but target is {}x{}",
                render.width, render.height, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient w.r.t. the rendered buffers.
#[derive(Clone, Debug)]
pub struct PixelLoss {
    pub value: f64,
    pub grad: PixelGradients,
}

/// A scalar loss and its gradient w.r.t. strand points.
#[derive(Clone, Debug)]
pub struct PointLoss {
    pub value: f64,
    pub grad: PointGradients,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sign3(v: &Point) -> Point {
    Point::new(sign(v.x), sign(v.y), sign(v.z))
}

/// Per-point terms of the strand loss; point `j` carries its position term,
/// the direction term of segment `j`, and the curvature term at `j` when
/// `j` is interior.
fn point_terms(pred: &[Point], gt: &[Point], weights: &LossWeights) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(shape_err(format!("strands have {} and {} points", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput("strand loss needs at least 2 points".into()));
    }
    let n = pred.len();
    let (bp, _) = segment_directions(pred);
    let (bg, _) = segment_directions(gt);
    let mut terms: Vec<f64> = pred.iter().zip(gt).map(|(p, q)| (p - q).norm()).collect();
    for j in 0..n - 1 {
        let dv = (pred[j + 1] - pred[j]) - (gt[j + 1] - gt[j]);
        terms[j] += weights.lambda_dir * dv.abs().sum();
    }
    for j in 1..n - 1 {
        let g = bp[j - 1].cross(&bp[j]).norm().min(1.0);
        let gh = bg[j - 1].cross(&bg[j]).norm().min(1.0);
        terms[j] += weights.lambda_curv * (g - gh).abs();
    }
    Ok(terms)
}

/// Adds `scale * ∂(point terms)/∂pred` into `grad`, optionally weighting each
/// point's terms by `w[j]`.
fn point_terms_grad(pred: &[Point], gt: &[Point], weights: &LossWeights, w: Option<&[f64]>, scale: f64, grad: &mut [Point]) {
    let n = pred.len();
    let wj = |j: usize| w.map_or(1.0, |w| w[j]) * scale;
    for j in 0..n {
        let d = pred[j] - gt[j];
        let len = d.norm();
        if len > 0.0 {
            grad[j] += d * (wj(j) / len);
        }
    }
    if weights.lambda_dir != 0.0 {
        for j in 0..n - 1 {
            let dv = (pred[j + 1] - pred[j]) - (gt[j + 1] - gt[j]);
            let g = sign3(&dv) * (weights.lambda_dir * wj(j));
            grad[j + 1] += g;
            grad[j] -= g;
        }
    }
    if weights.lambda_curv != 0.0 {
        let (bg, _) = segment_directions(gt);
        for j in 1..n - 1 {
            let va = pred[j] - pred[j - 1];
            let vb = pred[j + 1] - pred[j];
            let (la, lb) = (va.norm(), vb.norm());
            if la < DEGENERATE_SEGMENT || lb < DEGENERATE_SEGMENT {
                continue;
            }
            let (ba, bb) = (va / la, vb / lb);
            let c = ba.cross(&bb);
            let g = c.norm();
            if g == 0.0 || g >= 1.0 {
                continue;
            }
            let gh = bg[j - 1].cross(&bg[j]).norm().min(1.0);
            let u = c * (sign(g - gh) * weights.lambda_curv * wj(j) / g);
            // ∂(u·(ba×bb))/∂ba = bb×u, ∂/∂bb = u×ba
            let gba = bb.cross(&u);
            let gbb = u.cross(&ba);
            let gva = (gba - ba * ba.dot(&gba)) / la;
            let gvb = (gbb - bb * bb.dot(&gbb)) / lb;
            grad[j - 1] -= gva;
            grad[j] += gva - gvb;
            grad[j + 1] += gvb;
        }
    }
}

/// Strand reconstruction loss: position L2 + direction L1 + curvature
/// difference, summed over points. Returns the value and `∂/∂pred`.
pub fn point_loss(pred: &Strand, gt: &Strand, weights: &LossWeights) -> Result<(f64, Vec<Point>)> {
    let terms = point_terms(pred.points(), gt.points(), weights)?;
    let mut grad = vec![Point::zeros(); pred.len()];
    point_terms_grad(pred.points(), gt.points(), weights, None, 1.0, &mut grad);
    Ok((terms.iter().sum(), grad))
}

fn check_maps(pred: &HairMap, gt: &HairMap) -> Result<usize> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(shape_err("hair maps differ in size"));
    }
    let n = match (pred.point_count(), gt.point_count()) {
        (Some(a), Some(b)) if a != b => return Err(shape_err(format!("hair maps have {a} and {b} points per strand"))),
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => 0,
    };
    for (t, (a, b)) in pred.strands().iter().zip(gt.strands()).enumerate() {
        if a.is_some() != b.is_some() {
            return Err(shape_err(format!("texel {t} is active in only one hair map")));
        }
    }
    Ok(n)
}

/// Mean strand loss over the map, normalized by `H·W·L` (bald texels count
/// toward the normalization).
pub fn mae_loss(pred: &HairMap, gt: &HairMap, weights: &LossWeights) -> Result<PointLoss> {
    let n = check_maps(pred, gt)?;
    let norm = (pred.width() * pred.height() * n.max(1)) as f64;
    let mut grad = PointGradients::zeros_like(pred);
    let mut total = 0.0;
    for (t, s) in pred.active() {
        let g = gt.strand(t).expect("activity checked");
        total += point_terms(s.points(), g.points(), weights)?.iter().sum::<f64>();
        let slot = grad.per_texel[t].as_mut().expect("active");
        point_terms_grad(s.points(), g.points(), weights, None, 1.0 / norm, slot);
    }
    Ok(PointLoss { value: total / norm, grad })
}

/// Visibility-weighted strand loss `Σ w·L / Σ w` over active points.
pub fn weighted_mae_loss(pred: &HairMap, gt: &HairMap, vis: &[Option<Vec<f64>>], weights: &LossWeights) -> Result<PointLoss> {
    check_maps(pred, gt)?;
    if vis.len() != pred.strands().len() {
        return Err(shape_err("visibility weights do not match the hair map"));
    }
    let mut wsum = 0.0;
    let mut num = 0.0;
    for (t, s) in pred.active() {
        let w = vis[t].as_ref().ok_or_else(|| shape_err(format!("no weights for active texel {t}")))?;
        if w.len() != s.len() {
            return Err(shape_err(format!("texel {t} has {} weights for {} points", w.len(), s.len())));
        }
        if w.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput(format!("visibility weights at texel {t} must be positive")));
        }
        let terms = point_terms(s.points(), gt.strand(t).expect("activity checked").points(), weights)?;
        num += terms.iter().zip(w).map(|(l, w)| l * w).sum::<f64>();
        wsum += w.iter().sum::<f64>();
    }
    if wsum == 0.0 {
        return Err(Error::Degenerate("total visibility weight is zero".into()));
    }
    let mut grad = PointGradients::zeros_like(pred);
    for (t, s) in pred.active() {
        let slot = grad.per_texel[t].as_mut().expect("active");
        let w = vis[t].as_deref();
        point_terms_grad(s.points(), gt.strand(t).expect("active").points(), weights, w, 1.0 / wsum, slot);
    }
    Ok(PointLoss { value: num / wsum, grad })
}

/// Mean over texels of the L2 distance between the first `components`
/// coefficients.
pub fn pca_loss(pred: &PcaHairMap, gt: &PcaHairMap, components: usize) -> Result<f64> {
    if pred.texels() != gt.texels() || pred.num_components() != gt.num_components() {
        return Err(shape_err("coefficient maps differ in shape"));
    }
    if components > pred.num_components() {
        return Err(shape_err(format!("{components} components requested, map has {}", pred.num_components())));
    }
    let total: f64 = (0..pred.texels())
        .map(|t| {
            let (a, b) = (&pred.gamma(t)[..components], &gt.gamma(t)[..components]);
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .sum();
    Ok(total / pred.texels() as f64)
}

/// Mean absolute difference of baldness maps.
pub fn mask_loss(pred: &PcaHairMap, gt: &PcaHairMap) -> Result<f64> {
    if pred.texels() != gt.texels() {
        return Err(shape_err("baldness maps differ in size"));
    }
    let total: f64 = pred.baldness().iter().zip(gt.baldness()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / pred.texels() as f64)
}

/// Mean absolute silhouette error over all pixels.
pub fn seg_loss(render: &RenderBuffers, target: &TargetMaps) -> Result<PixelLoss> {
    target.check(render)?;
    let m = render.pixels() as f64;
    let mut grad = PixelGradients::zeros(render.pixels());
    let mut total = 0.0;
    for i in 0..render.pixels() {
        let d = render.silhouette[i] - target.silhouette[i];
        total += d.abs();
        grad.silhouette[i] = sign(d) / m;
    }
    Ok(PixelLoss { value: total / m, grad })
}

/// Mean L1 direction error over pixels with target silhouette > 0.
///
/// With `undirected` set each pixel takes the better of `b̂` and `-b̂`.
pub fn dirmap_loss(render: &RenderBuffers, target: &TargetMaps, undirected: bool) -> Result<PixelLoss> {
    target.check(render)?;
    let mut grad = PixelGradients::zeros(render.pixels());
    let mask: Vec<usize> = (0..render.pixels()).filter(|&i| target.silhouette[i] > 0.0).collect();
    if mask.is_empty() {
        return Ok(PixelLoss { value: 0.0, grad });
    }
    let m = mask.len() as f64;
    let mut total = 0.0;
    for i in mask {
        let b = render.direction[i];
        let mut t = target.direction[i];
        let l1 = |t: [f64; 2]| (b[0] - t[0]).abs() + (b[1] - t[1]).abs();
        if undirected && l1([-t[0], -t[1]]) < l1(t) {
            t = [-t[0], -t[1]];
        }
        total += l1(t);
        grad.direction[i] = [sign(b[0] - t[0]) / m, sign(b[1] - t[1]) / m];
    }
    Ok(PixelLoss { value: total / m, grad })
}

/// Mean L1 error of normalized depth over pixels where the render and the
/// target both show hair and the target depth is valid.
pub fn depth_loss(render: &RenderBuffers, target: &TargetMaps) -> Result<PixelLoss> {
    target.check(render)?;
    let mut grad = PixelGradients::zeros(render.pixels());
    let mask: Vec<usize> = (0..render.pixels())
        .filter(|&i| {
            render.depth_valid[i]
                && target.depth_valid[i]
                && render.silhouette[i] > SILHOUETTE_THRESHOLD
                && target.silhouette[i] > SILHOUETTE_THRESHOLD
        })
        .collect();
    if mask.is_empty() {
        return Ok(PixelLoss { value: 0.0, grad });
    }
    let m = mask.len() as f64;
    let mut total = 0.0;
    for i in mask {
        let d = (render.depth[i] - target.depth_offset) * target.depth_scale - target.depth[i];
        total += d.abs();
        grad.depth[i] = sign(d) * target.depth_scale / m;
    }
    Ok(PixelLoss { value: total / m, grad })
}

/// Mean head penetration depth over all `H·W·L` point slots.
pub fn pen_loss(hair: &HairMap, head: &HeadModel) -> Result<PointLoss> {
    let n = hair.point_count().unwrap_or(0);
    let norm = (hair.width() * hair.height() * n.max(1)) as f64;
    let mut grad = PointGradients::zeros_like(hair);
    let mut total = 0.0;
    for (t, s) in hair.active() {
        let slot = grad.per_texel[t].as_mut().expect("active");
        for (g, p) in slot.iter_mut().zip(s.points()) {
            let d = head.sdf(p);
            if d < 0.0 {
                total -= d;
                *g = -head.sdf_gradient(p) / norm;
            }
        }
    }
    Ok(PointLoss { value: total / norm, grad })
}

/// Breakdown of one evaluation of the image-space objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub seg: f64,
    pub dirmap: f64,
    pub pen: f64,
    pub depth: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "seg,dirmap,pen,depth,total";

    pub fn csv_fields(&self) -> String {
        format!("{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", self.seg, self.dirmap, self.pen, self.depth, self.total)
    }

    /// Weighted sum of the component terms.
    pub fn combine(seg: f64, dirmap: f64, pen: f64, depth: f64, w: &LossWeights) -> Self {
        let total = w.lambda_seg * seg + w.lambda_dirmap * dirmap + w.lambda_pen * pen + w.lambda_depth * depth;
        Self { seg, dirmap, pen, depth, total }
    }
}

/// Options for the image-space objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RealLossOptions {
    /// Compare directions modulo sign, for targets that carry orientation only.
    pub undirected: bool,
}

/// Image-space objective with gradients w.r.t. the render and the points.
#[derive(Clone, Debug)]
pub struct RealLoss {
    pub breakdown: LossBreakdown,
    pub pixel_grad: PixelGradients,
    pub point_grad: PointGradients,
}

/// `λ_seg·seg + λ_dirmap·dirmap + λ_pen·pen + λ_depth·depth`.
pub fn real_loss(
    render: &RenderBuffers,
    hair: &HairMap,
    target: &TargetMaps,
    head: &HeadModel,
    weights: &LossWeights,
    options: RealLossOptions,
) -> Result<RealLoss> {
    weights.validate()?;
    let seg = seg_loss(render, target)?;
    let dir = dirmap_loss(render, target, options.undirected)?;
    let depth = depth_loss(render, target)?;
    let pen = pen_loss(hair, head)?;
    let mut pixel_grad = PixelGradients::zeros(render.pixels());
    pixel_grad.add_scaled(&seg.grad, weights.lambda_seg);
    pixel_grad.add_scaled(&dir.grad, weights.lambda_dirmap);
    pixel_grad.add_scaled(&depth.grad, weights.lambda_depth);
    let mut point_grad = PointGradients::zeros_like(hair);
    point_grad.add_scaled(&pen.grad, weights.lambda_pen);
    Ok(RealLoss {
        breakdown: LossBreakdown::combine(seg.value, dir.value, pen.value, depth.value, weights),
        pixel_grad,
        point_grad,
    })
}

/// `synth + r·real`.
pub fn hybrid_loss(synth: f64, real: f64, r: f64) -> f64 {
    synth + r * real
}

/// Mean angle between two orientation fields modulo π, over masked pixels
/// where both vectors are nonzero. Result lies in `[0, π/2]`.
pub fn undir_metric(a: &[[f64; 2]], b: &[[f64; 2]], mask: &[bool]) -> Result<f64> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(shape_err("orientation fields differ in size"));
    }
    // Running mean: a constant field gives that constant back exactly.
    let mut mean = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        if !mask[i] {
            continue;
        }
        let (u, v) = (a[i], b[i]);
        if (u[0] == 0.0 && u[1] == 0.0) || (v[0] == 0.0 && v[1] == 0.0) {
            continue;
        }
        let cross = u[0] * v[1] - u[1] * v[0];
        let dot = u[0] * v[0] + u[1] * v[1];
        // Angle between lines, folded into [0, π/2].
        let d = cross.abs().atan2(dot.abs()).min(FRAC_PI_2);
        count += 1;
        mean += (d - mean) / count as f64;
    }
    if count == 0 {
        return Err(Error::Degenerate("orientation metric has no valid pixels".into()));
    }
    Ok(mean)
}

/// Orientation angles in `[0, π)` as unit vectors.
pub fn angles_to_vectors(angles: &[f64]) -> Vec<[f64; 2]> {
    angles.iter().map(|a| [a.cos(), a.sin()]).collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::hairmap::RootGrid;

    fn random_strand(rng: &mut ChaCha8Rng, n: usize) -> Strand {
        let mut p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut pts = vec![p];
        for _ in 1..n {
            p += Point::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            pts.push(p);
        }
        Strand::new(pts).unwrap()
    }

    fn all_weights() -> LossWeights {
        LossWeights { lambda_dir: 0.7, lambda_curv: 1.3, ..LossWeights::ZERO }
    }

    /// Per-term oracle written from the loss definition.
    fn point_loss_oracle(pred: &Strand, gt: &Strand, w: &LossWeights) -> f64 {
        let (p, q) = (pred.points(), gt.points());
        let mut s = 0.0;
        for j in 0..p.len() {
            s += (p[j] - q[j]).norm();
        }
        for j in 0..p.len() - 1 {
            let v = p[j + 1] - p[j];
            let vh = q[j + 1] - q[j];
            s += w.lambda_dir * ((v.x - vh.x).abs() + (v.y - vh.y).abs() + (v.z - vh.z).abs());
        }
        let curv = |x: &[Point], j: usize| {
            let a = (x[j] - x[j - 1]).normalize();
            let b = (x[j + 1] - x[j]).normalize();
            a.cross(&b).norm()
        };
        for j in 1..p.len() - 1 {
            s += w.lambda_curv * (curv(p, j) - curv(q, j)).abs();
        }
        s
    }

    #[test]
    fn identical_strands_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_strand(&mut rng, 12);
        let (v, g) = point_loss(&s, &s, &all_weights()).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|g| g.amax() == 0.0));
    }

    #[test]
    fn translated_strand_costs_only_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_strand(&mut rng, 15);
        let shifted = Strand::new(s.points().iter().map(|p| p + Point::new(0.125, 0.0, 0.0)).collect()).unwrap();
        let (v, _) = point_loss(&shifted, &s, &all_weights()).unwrap();
        assert!((v - 15.0 * 0.125).abs() < 1e-12);
    }

    #[test]
    fn point_loss_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = (random_strand(&mut rng, 9), random_strand(&mut rng, 9));
            let (v, _) = point_loss(&a, &b, &all_weights()).unwrap();
            assert!((v - point_loss_oracle(&a, &b, &all_weights())).abs() < 1e-9);
        }
    }

    #[test]
    fn point_loss_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = point_loss(&random_strand(&mut rng, 5), &random_strand(&mut rng, 6), &all_weights());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn point_loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        let w = all_weights();
        let mut checked = 0;
        for _ in 0..100 {
            let (a, b) = (random_strand(&mut rng, 6), random_strand(&mut rng, 6));
            let (_, g) = point_loss(&a, &b, &w).unwrap();
            let j = rng.random_range(0..6);
            let k = rng.random_range(0..3);
            let eval = |d: f64| {
                let mut pts = a.points().to_vec();
                pts[j][k] += d;
                point_loss_oracle(&Strand::new(pts).unwrap(), &b, &w)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            // Skip samples straddling a kink of |·|.
            let fd_half = (eval(h / 2.0) - eval(-h / 2.0)) / h;
            if (fd - fd_half).abs() > 1e-6 * (1.0 + fd.abs()) {
                continue;
            }
            checked += 1;
            assert!((fd - g[j][k]).abs() <= 1e-3 * fd.abs().max(1e-3), "fd {fd} vs {}", g[j][k]);
        }
        assert!(checked > 80);
    }

    fn flat_hair(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize, bald_every: usize) -> HairMap {
        let roots = RootGrid::from_head(&HeadModel::default(), w, h);
        let strands =
            (0..w * h).map(|t| if bald_every > 0 && t % bald_every == 0 { None } else { Some(random_strand(rng, n)) }).collect();
        HairMap::new(roots, strands).unwrap()
    }

    fn jitter(rng: &mut ChaCha8Rng, hair: &HairMap) -> HairMap {
        let strands = hair
            .strands()
            .iter()
            .map(|s| {
                s.as_ref().map(|s| {
                    Strand::new(s.points().iter().map(|p| p + Point::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))).collect())
                        .unwrap()
                })
            })
            .collect();
        HairMap::new(hair.roots().clone(), strands).unwrap()
    }

    #[test]
    fn mae_matches_loop_and_single_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = flat_hair(&mut rng, 3, 2, 7, 4);
        let pred = jitter(&mut rng, &gt);
        let w = all_weights();
        let mut oracle = 0.0;
        for t in 0..6 {
            if let (Some(a), Some(b)) = (pred.strand(t), gt.strand(t)) {
                oracle += point_loss_oracle(a, b, &w);
            }
        }
        oracle /= (6 * 7) as f64;
        assert!((mae_loss(&pred, &gt, &w).unwrap().value - oracle).abs() < 1e-9);
        assert_eq!(mae_loss(&gt, &gt, &w).unwrap().value, 0.0);

        // One tip moved along the segment direction: only its position and
        // direction terms change, and nothing bends at the tip.
        let mut strands = gt.strands().to_vec();
        let s = strands[1].as_ref().unwrap();
        let mut pts = s.points().to_vec();
        let step = (pts[6] - pts[5]) * 0.5;
        pts[6] += step;
        strands[1] = Some(Strand::new(pts).unwrap());
        let one = HairMap::new(gt.roots().clone(), strands).unwrap();
        let plain = LossWeights::ZERO;
        let v = mae_loss(&one, &gt, &plain).unwrap().value;
        assert!((v - step.norm() / 42.0).abs() < 1e-12);
    }

    #[test]
    fn mae_rejects_mismatched_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = flat_hair(&mut rng, 3, 2, 7, 0);
        let b = flat_hair(&mut rng, 3, 2, 8, 0);
        assert!(mae_loss(&a, &b, &all_weights()).is_err());
        let c = flat_hair(&mut rng, 2, 3, 7, 0);
        assert!(mae_loss(&a, &c, &all_weights()).is_err());
    }

    #[test]
    fn weighted_mae_reduces_to_mae_with_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = flat_hair(&mut rng, 3, 3, 6, 0);
        let pred = jitter(&mut rng, &gt);
        let vis: Vec<_> = (0..9).map(|_| Some(vec![3.0; 6])).collect();
        let a = weighted_mae_loss(&pred, &gt, &vis, &all_weights()).unwrap();
        let b = mae_loss(&pred, &gt, &all_weights()).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        for (x, y) in a.grad.per_texel.iter().flatten().flatten().zip(b.grad.per_texel.iter().flatten().flatten()) {
            assert!((x - y).amax() < 1e-12);
        }
        let w = weighted_mae_loss(&gt, &gt, &vis, &all_weights()).unwrap();
        assert_eq!(w.value, 0.0);
    }

    #[test]
    fn weighted_mae_two_point_closed_form() {
        // Two-point strands, positions off by 1 and 2, weights 3 and 1:
        // (3·1 + 1·2) / (3 + 1) = 1.25.
        let roots = RootGrid::from_head(&HeadModel::default(), 1, 1);
        let gt = HairMap::new(roots.clone(), vec![Some(Strand::new(vec![Point::zeros(), Point::z()]).unwrap())]).unwrap();
        let pred = HairMap::new(
            roots,
            vec![Some(Strand::new(vec![Point::new(1.0, 0.0, 0.0), Point::new(2.0, 0.0, 1.0)]).unwrap())],
        )
        .unwrap();
        let vis = vec![Some(vec![3.0, 1.0])];
        let v = weighted_mae_loss(&pred, &gt, &vis, &LossWeights::ZERO).unwrap().value;
        assert!((v - 1.25).abs() < 1e-15);
        let bad = vec![Some(vec![0.0, 1.0])];
        assert!(weighted_mae_loss(&pred, &gt, &bad, &LossWeights::ZERO).is_err());
    }

    #[test]
    fn weighted_mae_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = flat_hair(&mut rng, 2, 2, 5, 0);
        let pred = jitter(&mut rng, &gt);
        let vis: Vec<_> = (0..4).map(|_| Some((0..5).map(|_| if rng.random_bool(0.5) { 3.0 } else { 1.0 }).collect())).collect();
        let w = all_weights();
        let g = weighted_mae_loss(&pred, &gt, &vis, &w).unwrap().grad;
        let h = 1e-6;
        for t in 0..4 {
            for j in 0..5 {
                for k in 0..3 {
                    let eval = |d: f64| {
                        let strands = pred
                            .strands()
                            .iter()
                            .enumerate()
                            .map(|(u, s)| {
                                let mut pts = s.as_ref().unwrap().points().to_vec();
                                if u == t {
                                    pts[j][k] += d;
                                }
                                Some(Strand::new(pts).unwrap())
                            })
                            .collect();
                        let hm = HairMap::new(pred.roots().clone(), strands).unwrap();
                        weighted_mae_loss(&hm, &gt, &vis, &w).unwrap().value
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!((fd - g.get(t, j)[k]).abs() < 1e-6 * (1.0 + fd.abs()), "t{t} j{j} k{k}: fd {fd} vs {}", g.get(t, j)[k]);
                }
            }
        }
    }

    #[test]
    fn pca_and_mask_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let coeffs: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = PcaHairMap::new(2, 2, 6, coeffs.clone(), vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(pca_loss(&a, &a, 6).unwrap(), 0.0);
        assert_eq!(mask_loss(&a, &a).unwrap(), 0.0);

        let mut b = a.clone();
        b.gamma_mut(3)[2] += 1.0;
        assert!((pca_loss(&b, &a, 6).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(pca_loss(&b, &a, 2).unwrap(), 0.0);
        b.set_baldness(1, 1.0).unwrap();
        assert!((mask_loss(&b, &a).unwrap() - 0.25).abs() < 1e-15);

        let other: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = PcaHairMap::new(2, 2, 6, other, vec![0.3, 0.2, 0.9, 0.5]).unwrap();
        let mut oracle = 0.0;
        for t in 0..4 {
            let mut s = 0.0;
            for k in 0..6 {
                s += (a.gamma(t)[k] - c.gamma(t)[k]).powi(2);
            }
            oracle += s.sqrt();
        }
        assert!((pca_loss(&a, &c, 6).unwrap() - oracle / 4.0).abs() < 1e-12);
    }

    fn buffers(w: usize, h: usize, sil: Vec<f64>, dir: Vec<[f64; 2]>, depth: Vec<f64>) -> RenderBuffers {
        let mut b = RenderBuffers::zeros(w, h);
        b.depth_valid = sil.iter().map(|s| *s > 0.0).collect();
        b.silhouette = sil;
        b.direction = dir;
        b.depth = depth;
        b
    }

    fn target(w: usize, h: usize, sil: Vec<f64>, dir: Vec<[f64; 2]>, depth: Vec<f64>) -> TargetMaps {
        TargetMaps {
            width: w,
            height: h,
            depth_valid: sil.iter().map(|s| *s > 0.0).collect(),
            silhouette: sil,
            direction: dir,
            depth,
            depth_offset: 0.0,
            depth_scale: 1.0,
        }
    }

    #[test]
    fn seg_loss_cases() {
        let n = 6;
        let ones = buffers(3, 2, vec![1.0; n], vec![[0.0; 2]; n], vec![0.0; n]);
        let zero = target(3, 2, vec![0.0; n], vec![[0.0; 2]; n], vec![0.0; n]);
        assert_eq!(seg_loss(&ones, &zero).unwrap().value, 1.0);
        let same = target(3, 2, vec![1.0; n], vec![[0.0; 2]; n], vec![0.0; n]);
        assert_eq!(seg_loss(&ones, &same).unwrap().value, 0.0);
        let wrong = target(2, 3, vec![1.0; n], vec![[0.0; 2]; n], vec![0.0; n]);
        assert!(seg_loss(&ones, &wrong).is_err());
    }

    #[test]
    fn dirmap_two_pixel_case() {
        // Pixel 0 has hair with opposite directions, pixel 1 is background.
        let r = buffers(2, 1, vec![1.0, 0.3], vec![[1.0, 0.0], [0.2, 0.1]], vec![0.0; 2]);
        let t = target(2, 1, vec![1.0, 0.0], vec![[-1.0, 0.0], [0.0, 0.0]], vec![0.0; 2]);
        t.validate().unwrap();
        assert_eq!(dirmap_loss(&r, &t, false).unwrap().value, 2.0);
        assert_eq!(dirmap_loss(&r, &t, true).unwrap().value, 0.0);
        let same = buffers(2, 1, vec![1.0, 0.3], vec![[-1.0, 0.0], [0.2, 0.1]], vec![0.0; 2]);
        assert_eq!(dirmap_loss(&same, &t, false).unwrap().value, 0.0);
    }

    #[test]
    fn depth_loss_offset_and_mask() {
        let r = buffers(3, 1, vec![0.9, 0.9, 0.2], vec![[0.0; 2]; 3], vec![0.5, 0.7, 0.1]);
        let t = target(3, 1, vec![1.0, 1.0, 1.0], vec![[0.0; 2]; 3], vec![0.25, 0.45, 0.9]);
        // Pixel 2 is masked out by the rendered silhouette.
        assert!((depth_loss(&r, &t).unwrap().value - 0.25).abs() < 1e-15);
        let mut t2 = t.clone();
        t2.depth_offset = 0.25;
        assert!(depth_loss(&r, &t2).unwrap().value.abs() < 1e-15);
    }

    fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (RenderBuffers, TargetMaps) {
        let sil: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let dir = |rng: &mut ChaCha8Rng, s: &[f64]| -> Vec<[f64; 2]> {
            s.iter()
                .map(|s| if *s > 0.0 { [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)] } else { [0.0; 2] })
                .collect()
        };
        let rd = dir(rng, &sil);
        let r = buffers(n, 1, sil.clone(), rd, (0..n).map(|_| rng.random_range(0.0..1.0)).collect());
        let ts: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let td = dir(rng, &ts);
        let t = target(n, 1, ts, td, (0..n).map(|_| rng.random_range(0.0..1.0)).collect());
        (r, t)
    }

    #[test]
    fn image_losses_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (r, t) = random_pair(&mut rng, 50);
            t.validate().unwrap();
            let mut seg = 0.0;
            let (mut dir, mut dn) = (0.0, 0);
            let (mut dep, mut zn) = (0.0, 0);
            for i in 0..50 {
                seg += (r.silhouette[i] - t.silhouette[i]).abs();
                if t.silhouette[i] > 0.0 {
                    dir += (r.direction[i][0] - t.direction[i][0]).abs() + (r.direction[i][1] - t.direction[i][1]).abs();
                    dn += 1;
                }
                if r.silhouette[i] > 0.5 && t.silhouette[i] > 0.5 {
                    dep += (r.depth[i] - t.depth[i]).abs();
                    zn += 1;
                }
            }
            assert!((seg_loss(&r, &t).unwrap().value - seg / 50.0).abs() < 1e-9);
            assert!((dirmap_loss(&r, &t, false).unwrap().value - dir / dn as f64).abs() < 1e-9);
            let expect = if zn == 0 { 0.0 } else { dep / zn as f64 };
            assert!((depth_loss(&r, &t).unwrap().value - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (r, t) = random_pair(&mut rng, 40);
        let h = 1e-7;
        for i in 0..40 {
            let mut p = r.clone();
            p.silhouette[i] += h;
            let mut m = r.clone();
            m.silhouette[i] -= h;
            let fd = (seg_loss(&p, &t).unwrap().value - seg_loss(&m, &t).unwrap().value) / (2.0 * h);
            assert!((fd - seg_loss(&r, &t).unwrap().grad.silhouette[i]).abs() < 1e-6);
            for c in 0..2 {
                let mut p = r.clone();
                p.direction[i][c] += h;
                let mut m = r.clone();
                m.direction[i][c] -= h;
                let fd = (dirmap_loss(&p, &t, false).unwrap().value - dirmap_loss(&m, &t, false).unwrap().value) / (2.0 * h);
                assert!((fd - dirmap_loss(&r, &t, false).unwrap().grad.direction[i][c]).abs() < 1e-6);
            }
            let mut p = r.clone();
            p.depth[i] += h;
            let mut m = r.clone();
            m.depth[i] -= h;
            let fd = (depth_loss(&p, &t).unwrap().value - depth_loss(&m, &t).unwrap().value) / (2.0 * h);
            assert!((fd - depth_loss(&r, &t).unwrap().grad.depth[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn pen_loss_cases() {
        let head = HeadModel::sphere(Point::zeros(), 1.0);
        let roots = RootGrid::from_head(&head, 2, 1);
        let outside = Strand::new(vec![Point::new(0.0, 0.0, 1.5), Point::new(0.0, 0.0, 2.0)]).unwrap();
        let hair = HairMap::new(roots.clone(), vec![Some(outside.clone()), None]).unwrap();
        assert_eq!(pen_loss(&hair, &head).unwrap().value, 0.0);

        let center = Strand::new(vec![Point::zeros(), Point::new(0.0, 0.0, 2.0)]).unwrap();
        let hair = HairMap::new(roots, vec![Some(outside), Some(center)]).unwrap();
        assert!((pen_loss(&hair, &head).unwrap().value - 1.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn pen_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let head = HeadModel::default();
        let roots = RootGrid::from_head(&head, 2, 2);
        let strands: Vec<_> = (0..4)
            .map(|_| {
                Some(
                    Strand::new((0..5).map(|_| Point::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2))).collect())
                        .unwrap(),
                )
            })
            .collect();
        let hair = HairMap::new(roots, strands).unwrap();
        let g = pen_loss(&hair, &head).unwrap().grad;
        let h = 1e-6;
        for t in 0..4 {
            for j in 0..5 {
                let p = hair.strand(t).unwrap().points()[j];
                if head.sdf(&p).abs() < 1e-3 {
                    continue;
                }
                for k in 0..3 {
                    let eval = |d: f64| {
                        let strands = hair
                            .strands()
                            .iter()
                            .enumerate()
                            .map(|(u, s)| {
                                let mut pts = s.as_ref().unwrap().points().to_vec();
                                if u == t {
                                    pts[j][k] += d;
                                }
                                Some(Strand::new(pts).unwrap())
                            })
                            .collect();
                        pen_loss(&HairMap::new(hair.roots().clone(), strands).unwrap(), &head).unwrap().value
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!((fd - g.get(t, j)[k]).abs() <= 1e-3 * fd.abs().max(1e-6));
                }
            }
        }
    }

    #[test]
    fn real_loss_weights_and_linearity() {
        assert_eq!(hybrid_loss(2.0, 7.0, 0.0), 2.0);
        assert_eq!(hybrid_loss(1.0, 1.0, 0.5), 1.5);
        assert_eq!(hybrid_loss(1.0, 2.0, 0.25) - hybrid_loss(1.0, 2.0, 0.0), 0.5);
        let w = LossWeights::inversion();
        let unit = LossBreakdown::combine(1.0, 1.0, 1.0, 1.0, &w);
        assert!((unit.total - 2.11).abs() < 1e-12);
        let zero = LossBreakdown::combine(0.0, 0.0, 0.0, 0.0, &w);
        assert_eq!(zero.total, 0.0);
        let a = LossBreakdown::combine(0.3, 0.2, 0.1, 0.4, &w);
        let b = LossBreakdown::combine(0.6, 0.4, 0.2, 0.8, &w);
        assert!((b.total - 2.0 * a.total).abs() < 1e-15);
    }

    #[test]
    fn real_loss_collects_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (r, t) = random_pair(&mut rng, 30);
        let head = HeadModel::default();
        let roots = RootGrid::from_head(&head, 1, 1);
        let hair = HairMap::new(roots, vec![Some(Strand::new(vec![Point::new(0.1, 0.0, 0.0), Point::new(0.0, 0.0, 3.0)]).unwrap())]).unwrap();
        let w = LossWeights::inversion();
        let l = real_loss(&r, &hair, &t, &head, &w, RealLossOptions::default()).unwrap();
        let seg = seg_loss(&r, &t).unwrap();
        assert!((l.pixel_grad.silhouette[3] - seg.grad.silhouette[3]).abs() < 1e-15);
        assert!(l.breakdown.pen > 0.0);
        assert!(l.point_grad.get(0, 0).norm() > 0.0);
        assert_eq!(l.point_grad.get(0, 1), Point::zeros());
        let mut bad = w;
        bad.lambda_seg = -1.0;
        assert!(real_loss(&r, &hair, &t, &head, &bad, RealLossOptions::default()).is_err());
    }

    #[test]
    fn undir_metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a: Vec<[f64; 2]> = (0..100).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let neg: Vec<[f64; 2]> = a.iter().map(|v| [-v[0], -v[1]]).collect();
        let perp: Vec<[f64; 2]> = a.iter().map(|v| [-v[1], v[0]]).collect();
        let mask = vec![true; 100];
        assert_eq!(undir_metric(&a, &a, &mask).unwrap(), 0.0);
        assert_eq!(undir_metric(&a, &neg, &mask).unwrap(), 0.0);
        assert_eq!(undir_metric(&a, &perp, &mask).unwrap(), FRAC_PI_2);
        let b: Vec<[f64; 2]> = (0..100).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        assert_eq!(undir_metric(&a, &b, &mask).unwrap(), undir_metric(&b, &a, &mask).unwrap());
        let d = undir_metric(&a, &b, &mask).unwrap();
        assert!((0.0..=FRAC_PI_2).contains(&d));
        assert!(undir_metric(&a, &b, &[false; 100]).is_err());
    }

    #[test]
    fn weight_presets() {
        let w = LossWeights::inversion();
        assert_eq!((w.lambda_seg, w.lambda_dirmap, w.lambda_pen, w.lambda_depth), (1.0, 0.8, 0.3, 0.01));
        let h = LossWeights::hybrid();
        assert_eq!((h.lambda_seg, h.lambda_dirmap, h.lambda_pen, h.lambda_depth, h.mixing_rate_r), (10.0, 5.0, 0.1, 0.01, 0.5));
        let c = LossWeights::coarse();
        assert_eq!((c.lambda_pca, c.lambda_dir, c.lambda_curv, c.lambda_mask), (0.1, 0.1, 1.0, 0.0001));
        let f = LossWeights::fine();
        assert_eq!((f.lambda_pca, f.lambda_dir, f.lambda_curv, f.lambda_mask), (10.0, 0.1, 0.1, 0.0001));
        let j = LossWeights::joint();
        assert_eq!((j.lambda_pca, j.lambda_dir, j.lambda_curv, j.lambda_mask), (1.0, 0.1, 0.1, 0.0001));
        assert_eq!((h.lambda_pca, h.lambda_dir, h.lambda_curv, h.lambda_mask), (0.1, 0.1, 0.1, 0.0001));
        for p in [w, h, c, f, j] {
            p.validate().unwrap();
        }
    }
}
