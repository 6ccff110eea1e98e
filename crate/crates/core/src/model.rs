//! The differentiable chain from a PCA hair map to dense world-space strands.

use rayon::prelude::*;

use crate::codec::{decode_points, Point, StrandBasis};
use crate::error::{shape_err, Error, Result};
use crate::hairmap::{apply_upsample, decode_map, HairMap, PcaHairMap, RootGrid, UpsamplePlan};
use crate::render::PointGradients;
use crate::scalp::HeadModel;

/// Basis, head, guide grid and a fixed upsampling plan.
///
/// Baldness is frozen at construction: the plan depends on which guides are
/// active, so maps passed to [`HairModel::forward`] must keep that pattern.
#[derive(Clone, Debug)]
pub struct HairModel {
    pub basis: StrandBasis,
    pub head: HeadModel,
    pub guides: RootGrid,
    pub dense: RootGrid,
    pub plan: UpsamplePlan,
    pub bald_threshold: f64,
    active: Vec<bool>,
}

impl HairModel {
    pub fn new(
        basis: StrandBasis,
        head: HeadModel,
        pca: &PcaHairMap,
        upsample: usize,
        nearest_weight: f64,
        bald_threshold: f64,
    ) -> Result<Self> {
        head.validate()?;
        if upsample == 0 {
            return Err(Error::InvalidInput("upsampling factor must be at least 1".into()));
        }
        if pca.num_components() != basis.num_components() {
            return Err(shape_err(format!(
                "hair map has {} components, basis has {}",
                pca.num_components(),
                basis.num_components()
            )));
        }
        let (w, h) = (pca.width(), pca.height());
        let guides = RootGrid::from_head(&head, w, h);
        let dense = RootGrid::from_head(&head, w * upsample, h * upsample);
        let active = pca.active(bald_threshold);
        let plan = UpsamplePlan::new(&active, (w, h), (w * upsample, h * upsample), nearest_weight)?;
        Ok(Self { basis, head, guides, dense, plan, bald_threshold, active })
    }

    pub fn num_components(&self) -> usize {
        self.basis.num_components()
    }

    pub fn guide_active(&self) -> &[bool] {
        &self.active
    }

    fn check(&self, pca: &PcaHairMap) -> Result<()> {
        if pca.width() != self.guides.width() || pca.height() != self.guides.height() {
            return Err(shape_err("hair map does not match the model's guide grid"));
        }
        if pca.num_components() != self.num_components() {
            return Err(shape_err("hair map does not match the model's basis"));
        }
        if pca.active(self.bald_threshold) != self.active {
            return Err(Error::State("baldness pattern changed since the model was built".into()));
        }
        Ok(())
    }

    /// Decoded guide strands.
    pub fn guides(&self, pca: &PcaHairMap) -> Result<HairMap> {
        self.check(pca)?;
        decode_map(pca, &self.basis, &self.guides, self.bald_threshold)
    }

    /// Dense strands: decode the guides and upsample them.
    pub fn forward(&self, pca: &PcaHairMap) -> Result<HairMap> {
        let guides = self.guides(pca)?;
        apply_upsample(&guides, &self.dense, &self.plan)
    }

    /// Pulls a gradient on dense world points back to the coefficient map.
    ///
    /// Returns a vector laid out like [`PcaHairMap::coeffs`]; bald texels get
    /// zero.
    pub fn backward(&self, dense_grad: &PointGradients) -> Result<Vec<f64>> {
        if dense_grad.per_texel.len() != self.plan.entries.len() {
            return Err(shape_err("gradient does not match the dense grid"));
        }
        let n = self.basis.point_count();
        let guides = self.active.len();
        // Dense world gradient -> dense root-local gradient -> guide local gradient.
        let mut local = vec![vec![0.0; 3 * n]; guides];
        for (t, entry) in self.plan.entries.iter().enumerate() {
            let (Some(taps), Some(g)) = (entry, &dense_grad.per_texel[t]) else {
                if entry.is_some() != dense_grad.per_texel[t].is_some() {
                    return Err(Error::State(format!("gradient activity differs from the plan at texel {t}")));
                }
                continue;
            };
            if g.len() != n {
                return Err(shape_err(format!("texel {t} gradient has {} points, expected {n}", g.len())));
            }
            let frame = self.dense.frame(t);
            let gl: Vec<Point> = g.iter().map(|g| frame.to_local(g)).collect();
            for &(s, w) in taps {
                for (acc, v) in local[s].chunks_exact_mut(3).zip(&gl) {
                    acc[0] += w * v.x;
                    acc[1] += w * v.y;
                    acc[2] += w * v.z;
                }
            }
        }
        let pc = self.basis.point_components();
        let c = self.num_components();
        let rows: Vec<Vec<f64>> = local
            .par_iter()
            .enumerate()
            .map(|(s, gl)| {
                if !self.active[s] {
                    return vec![0.0; c];
                }
                (0..c).map(|k| pc.row(k).iter().zip(gl).map(|(a, b)| a * b).sum()).collect()
            })
            .collect();
        Ok(rows.concat())
    }

    /// Root-local points of one guide for coefficients `gamma`.
    pub fn local_points(&self, gamma: &[f64]) -> Vec<Point> {
        let mut flat = vec![0.0; 3 * self.basis.point_count()];
        decode_points(gamma, &self.basis, &mut flat);
        flat.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect()
    }
}
