//! Texture-space hairstyles.
//!
//! Texel `(i, j)` of a `W x H` map sits at chart coordinates
//! `u = (i + 0.5) / W`, `v = (j + 0.5) / H` and is stored at index `j * W + i`.

use rayon::prelude::*;

use crate::codec::{decode_points, encode_strand, Point, Strand, StrandBasis};
use crate::error::{shape_err, Error, Result};
use crate::scalp::{Frame, HeadModel};

pub const DEFAULT_BALD_THRESHOLD: f64 = 0.5;
pub const DEFAULT_NEAREST_WEIGHT: f64 = 0.5;

/// Per-texel coefficient vectors plus a baldness mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaHairMap {
    width: usize,
    height: usize,
    num_components: usize,
    coeffs: Vec<f64>,
    baldness: Vec<f64>,
}

impl PcaHairMap {
    pub fn new(width: usize, height: usize, num_components: usize, coeffs: Vec<f64>, baldness: Vec<f64>) -> Result<Self> {
        let texels = width * height;
        if texels == 0 {
            return Err(shape_err("hair map must have at least one texel"));
        }
        if coeffs.len() != texels * num_components || baldness.len() != texels {
            return Err(shape_err(format!(
                "{width}x{height}x{num_components} map got {} coefficients and {} baldness values",
                coeffs.len(),
                baldness.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient in hair map".into()));
        }
        if baldness.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidInput("baldness outside [0, 1]".into()));
        }
        Ok(Self { width, height, num_components, coeffs, baldness })
    }

    /// All-zero coefficients, fully bald.
    pub fn bald(width: usize, height: usize, num_components: usize) -> Self {
        Self {
            width,
            height,
            num_components,
            coeffs: vec![0.0; width * height * num_components],
            baldness: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texels(&self) -> usize {
        self.width * self.height
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn baldness(&self) -> &[f64] {
        &self.baldness
    }

    pub fn gamma(&self, texel: usize) -> &[f64] {
        &self.coeffs[texel * self.num_components..(texel + 1) * self.num_components]
    }

    pub fn gamma_mut(&mut self, texel: usize) -> &mut [f64] {
        &mut self.coeffs[texel * self.num_components..(texel + 1) * self.num_components]
    }

    pub fn set_baldness(&mut self, texel: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput("baldness outside [0, 1]".into()));
        }
        self.baldness[texel] = value;
        Ok(())
    }

    pub fn active(&self, threshold: f64) -> Vec<bool> {
        self.baldness.iter().map(|b| *b >= threshold).collect()
    }
}

/// Root positions and frames sampled from the scalp chart.
#[derive(Clone, Debug, PartialEq)]
pub struct RootGrid {
    width: usize,
    height: usize,
    positions: Vec<Point>,
    frames: Vec<Frame>,
}

impl RootGrid {
    pub fn from_head(head: &HeadModel, width: usize, height: usize) -> Self {
        let (positions, frames) = (0..width * height)
            .map(|t| {
                let (i, j) = (t % width, t / width);
                head.scalp_point((i as f64 + 0.5) / width as f64, (j as f64 + 0.5) / height as f64)
            })
            .unzip();
        Self { width, height, positions, frames }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn position(&self, texel: usize) -> Point {
        self.positions[texel]
    }

    pub fn frame(&self, texel: usize) -> &Frame {
        &self.frames[texel]
    }
}

/// World-space strands per texel; `None` marks a bald texel.
#[derive(Clone, Debug, PartialEq)]
pub struct HairMap {
    roots: RootGrid,
    strands: Vec<Option<Strand>>,
}

impl HairMap {
    pub fn new(roots: RootGrid, strands: Vec<Option<Strand>>) -> Result<Self> {
        if strands.len() != roots.width * roots.height {
            return Err(shape_err("strand count does not match root grid"));
        }
        Ok(Self { roots, strands })
    }

    pub fn width(&self) -> usize {
        self.roots.width
    }

    pub fn height(&self) -> usize {
        self.roots.height
    }

    pub fn roots(&self) -> &RootGrid {
        &self.roots
    }

    pub fn strands(&self) -> &[Option<Strand>] {
        &self.strands
    }

    pub fn strand(&self, texel: usize) -> Option<&Strand> {
        self.strands[texel].as_ref()
    }

    pub fn active_count(&self) -> usize {
        self.strands.iter().filter(|s| s.is_some()).count()
    }

    /// `(texel, strand)` for active texels in index order.
    pub fn active(&self) -> impl Iterator<Item = (usize, &Strand)> {
        self.strands.iter().enumerate().filter_map(|(t, s)| s.as_ref().map(|s| (t, s)))
    }

    /// Points per strand, if any strand is active.
    pub fn point_count(&self) -> Option<usize> {
        self.active().next().map(|(_, s)| s.len())
    }

    /// Root-local copy of the strand at `texel`.
    pub fn local_strand(&self, texel: usize) -> Option<Vec<Point>> {
        let frame = self.roots.frame(texel);
        let root = self.roots.position(texel);
        self.strands[texel]
            .as_ref()
            .map(|s| s.points().iter().map(|p| frame.to_local(&(p - root))).collect())
    }
}

fn check_dims(pca: &PcaHairMap, basis: &StrandBasis, roots: &RootGrid) -> Result<()> {
    if pca.width != roots.width || pca.height != roots.height {
        return Err(shape_err(format!(
            "hair map is {}x{} but root grid is {}x{}",
            pca.width, pca.height, roots.width, roots.height
        )));
    }
    if pca.num_components != basis.num_components() {
        return Err(shape_err(format!(
            "hair map has {} components, basis has {}",
            pca.num_components,
            basis.num_components()
        )));
    }
    Ok(())
}

/// Decodes every texel with `baldness >= bald_threshold` and places it on the scalp.
pub fn decode_map(pca: &PcaHairMap, basis: &StrandBasis, roots: &RootGrid, bald_threshold: f64) -> Result<HairMap> {
    check_dims(pca, basis, roots)?;
    let n = basis.point_count();
    let strands = (0..pca.texels())
        .into_par_iter()
        .map(|t| {
            if pca.baldness[t] < bald_threshold {
                return Ok(None);
            }
            let mut local = vec![0.0; 3 * n];
            decode_points(pca.gamma(t), basis, &mut local);
            let frame = roots.frame(t);
            let root = roots.position(t);
            let pts = local
                .chunks_exact(3)
                .map(|c| frame.to_world(&Point::new(c[0], c[1], c[2])) + root)
                .collect();
            Strand::new(pts).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    HairMap::new(roots.clone(), strands)
}

/// Builds a PCA map from world-space strands tagged with root UVs.
///
/// Each strand lands in texel `floor(uv * dims)`. When several strands land
/// in one texel the one whose root UV is nearest the texel center wins, with
/// ties going to the lower input index.
pub fn project_dataset(
    strands: &[(Strand, [f64; 2])],
    head: &HeadModel,
    basis: &StrandBasis,
    width: usize,
    height: usize,
) -> Result<PcaHairMap> {
    let mut map = PcaHairMap::bald(width, height, basis.num_components());
    let mut best: Vec<Option<(f64, usize)>> = vec![None; width * height];
    for (idx, (_, uv)) in strands.iter().enumerate() {
        if !(0.0..1.0).contains(&uv[0]) || !(0.0..1.0).contains(&uv[1]) {
            return Err(Error::InvalidInput(format!("root UV {uv:?} outside [0,1)²")));
        }
        let i = ((uv[0] * width as f64) as usize).min(width - 1);
        let j = ((uv[1] * height as f64) as usize).min(height - 1);
        let cu = (i as f64 + 0.5) / width as f64;
        let cv = (j as f64 + 0.5) / height as f64;
        let d = (uv[0] - cu).powi(2) + (uv[1] - cv).powi(2);
        let slot = &mut best[j * width + i];
        if slot.is_none_or(|(bd, _)| d < bd) {
            *slot = Some((d, idx));
        }
    }
    for (t, slot) in best.iter().enumerate() {
        let Some((_, idx)) = *slot else { continue };
        let (strand, uv) = &strands[idx];
        let (_, frame) = head.scalp_point(uv[0], uv[1]);
        let root = strand.root();
        let local = Strand::new(strand.points().iter().map(|p| frame.to_local(&(p - root))).collect())?;
        let gamma = encode_strand(&local, basis)?;
        map.gamma_mut(t).copy_from_slice(&gamma.gamma);
        map.baldness[t] = 1.0;
    }
    Ok(map)
}

/// Sparse linear map from guide texels to upsampled texels.
///
/// Entry `t` lists `(guide_texel, weight)` pairs whose weighted sum of
/// root-local strands gives the root-local strand of output texel `t`;
/// `None` marks an inactive output texel.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsamplePlan {
    pub src_width: usize,
    pub src_height: usize,
    pub dst_width: usize,
    pub dst_height: usize,
    pub entries: Vec<Option<Vec<(usize, f64)>>>,
}

impl UpsamplePlan {
    /// Nearest/bilinear blend: `w * nearest + (1 - w) * bilinear`.
    ///
    /// `u` wraps around (it is azimuth); `v` clamps at the chart border.
    /// Bilinear taps on inactive guides are dropped and the remaining taps
    /// renormalized. Output activity is the nearest guide's activity.
    pub fn new(active: &[bool], src: (usize, usize), dst: (usize, usize), nearest_weight: f64) -> Result<Self> {
        let (sw, sh) = src;
        let (dw, dh) = dst;
        if sw == 0 || sh == 0 || dw % sw != 0 || dh % sh != 0 || dw < sw || dh < sh {
            return Err(shape_err(format!("cannot upsample {sw}x{sh} to {dw}x{dh}: not an integer multiple")));
        }
        if active.len() != sw * sh {
            return Err(shape_err("activity mask does not match source dims"));
        }
        if !(0.0..=1.0).contains(&nearest_weight) {
            return Err(Error::InvalidInput("nearest weight must lie in [0, 1]".into()));
        }
        let (fx, fy) = (dw / sw, dh / sh);
        let entries = (0..dw * dh)
            .map(|t| {
                let (ii, jj) = (t % dw, t / dw);
                let near = (jj / fy) * sw + ii / fx;
                if !active[near] {
                    return None;
                }
                let x = (ii as f64 + 0.5) / fx as f64 - 0.5;
                let y = ((jj as f64 + 0.5) / fy as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
                let (x0, y0) = (x.floor(), y.floor());
                let (wx, wy) = (x - x0, y - y0);
                let xi = |k: f64| (k as i64).rem_euclid(sw as i64) as usize;
                let yi = |k: f64| (k as usize).min(sh - 1);
                let taps = [
                    (yi(y0) * sw + xi(x0), (1.0 - wx) * (1.0 - wy)),
                    (yi(y0) * sw + xi(x0 + 1.0), wx * (1.0 - wy)),
                    (yi(y0 + 1.0) * sw + xi(x0), (1.0 - wx) * wy),
                    (yi(y0 + 1.0) * sw + xi(x0 + 1.0), wx * wy),
                ];
                let total: f64 = taps.iter().filter(|(s, _)| active[*s]).map(|(_, w)| w).sum();
                let mut out = vec![(near, nearest_weight)];
                if total > 0.0 {
                    out.extend(
                        taps.iter()
                            .filter(|(s, w)| active[*s] && *w > 0.0)
                            .map(|&(s, w)| (s, (1.0 - nearest_weight) * w / total)),
                    );
                } else {
                    out[0].1 = 1.0;
                }
                Some(out)
            })
            .collect();
        Ok(Self { src_width: sw, src_height: sh, dst_width: dw, dst_height: dh, entries })
    }

    pub fn active_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

/// Upsamples guide strands onto `target` (a finer root grid of the same chart).
pub fn upsample_guides(hair: &HairMap, target: &RootGrid, nearest_weight: f64) -> Result<HairMap> {
    let active: Vec<bool> = hair.strands.iter().map(Option::is_some).collect();
    let plan = UpsamplePlan::new(
        &active,
        (hair.width(), hair.height()),
        (target.width, target.height),
        nearest_weight,
    )?;
    apply_upsample(hair, target, &plan)
}

pub fn apply_upsample(hair: &HairMap, target: &RootGrid, plan: &UpsamplePlan) -> Result<HairMap> {
    if plan.dst_width != target.width || plan.dst_height != target.height {
        return Err(shape_err("upsample plan does not match target grid"));
    }
    let locals: Vec<Option<Vec<Point>>> = (0..hair.strands.len()).map(|t| hair.local_strand(t)).collect();
    let n = hair.point_count().unwrap_or(0);
    let strands = plan
        .entries
        .par_iter()
        .enumerate()
        .map(|(t, entry)| {
            let Some(taps) = entry else { return Ok(None) };
            let mut acc = vec![Point::zeros(); n];
            for &(s, w) in taps {
                let src = locals[s].as_ref().ok_or_else(|| Error::State("plan references a bald guide".into()))?;
                for (a, p) in acc.iter_mut().zip(src) {
                    *a += p * w;
                }
            }
            let frame = target.frame(t);
            let root = target.position(t);
            Strand::new(acc.iter().map(|p| frame.to_world(p) + root).collect()).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    HairMap::new(target.clone(), strands)
}
