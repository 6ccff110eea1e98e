//! AdamW, the coarse-to-fine fitting loop, and evaluation metrics.

use std::fmt::Write as _;
use std::time::Instant;

use kiddo::{KdTree, SquaredEuclidean};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{segment_directions, Point, Strand, COARSE_COMPONENTS};
use crate::error::{shape_err, Error, Result};
use crate::hairmap::PcaHairMap;
use crate::losses::{depth_loss, real_loss, undir_metric, LossBreakdown, LossWeights, RealLossOptions, TargetMaps, SILHOUETTE_THRESHOLD};
use crate::model::HairModel;
use crate::render::{build_splats, rasterize, rasterize_backward, RenderBuffers, RenderConfig};
use crate::scalp::CameraModel;

/// Adam with decoupled weight decay.
///
/// Bias correction uses a per-parameter step count, so a parameter that was
/// frozen for a while starts with properly corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u32>,
}

impl AdamW {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; len], v: vec![0.0; len], steps: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Updates `params` in place. Entries with `frozen[i]` set are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], frozen: Option<&[bool]>) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n || frozen.is_some_and(|f| f.len() != n) {
            return Err(shape_err(format!(
                "optimizer holds {n} parameters, got {} params / {} grads",
                params.len(),
                grads.len()
            )));
        }
        for i in 0..n {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let g = grads[i];
            params[i] -= self.lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / (1.0 - self.beta1.powi(t));
            let vh = self.v[i] / (1.0 - self.beta2.powi(t));
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One supervised camera.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: CameraModel,
    pub targets: TargetMaps,
}

/// Settings of the fitting loop.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSchedule {
    pub total_steps: usize,
    pub coarse_steps: usize,
    pub coarse_components: usize,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Per-component scale of the optimized variables. The optimizer works
    /// on `γ / scale`, so the step size is measured in units of `scale`.
    pub coefficient_scale: Option<Vec<f64>>,
    /// Sample a view uniformly per step; otherwise cycle through views.
    pub random_views: bool,
    pub seed: u64,
    pub render: RenderConfig,
    pub undirected: bool,
}

impl Default for FitSchedule {
    fn default() -> Self {
        Self {
            total_steps: 400,
            coarse_steps: 20,
            coarse_components: COARSE_COMPONENTS,
            weights: LossWeights::inversion(),
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            coefficient_scale: None,
            random_views: true,
            seed: 0,
            render: RenderConfig::default(),
            undirected: false,
        }
    }
}

impl FitSchedule {
    pub fn validate(&self, num_components: usize) -> Result<()> {
        if self.coarse_steps > self.total_steps {
            return Err(Error::InvalidInput("coarse steps exceed total steps".into()));
        }
        if self.coarse_components > num_components {
            return Err(Error::InvalidInput(format!(
                "{} coarse components but the basis has {num_components}",
                self.coarse_components
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive and weight decay nonnegative".into()));
        }
        if let Some(s) = &self.coefficient_scale {
            if s.len() != num_components || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput("coefficient scale must hold one positive value per component".into()));
            }
        }
        self.weights.validate()?;
        self.render.validate()
    }
}

/// Image-space quality of a render against its targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub iou: f64,
    /// `None` when no pixel has both orientations defined.
    pub undir: Option<f64>,
    pub depth_l1: f64,
}

/// Silhouette IoU at 0.5, orientation error over target hair pixels, and
/// masked normalized-depth L1.
pub fn eval_metrics(render: &RenderBuffers, target: &TargetMaps) -> Result<Metrics> {
    if render.width != target.width || render.height != target.height {
        return Err(shape_err("render and target differ in size"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..render.pixels() {
        let a = render.silhouette[i] > SILHOUETTE_THRESHOLD;
        let b = target.silhouette[i] > SILHOUETTE_THRESHOLD;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let mask: Vec<bool> = target.silhouette.iter().map(|s| *s > SILHOUETTE_THRESHOLD).collect();
    let undir = undir_metric(&render.direction, &target.direction, &mask).ok();
    Ok(Metrics { iou, undir, depth_l1: depth_loss(render, target)?.value })
}

/// One optimizer step's record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub view: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitStatus {
    Completed,
    /// Loss or gradient stopped being finite at this step; the returned map
    /// holds the last finite parameters.
    Diverged { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub steps: Vec<StepRecord>,
    /// Loss of the returned map on each view.
    pub final_loss: Vec<LossBreakdown>,
    pub final_metrics: Vec<Metrics>,
    pub status: FitStatus,
    pub wall_time_s: f64,
}

impl FitReport {
    /// Per-step loss CSV: `step,view,seg,dirmap,pen,depth,total`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("step,view,{}\n", LossBreakdown::CSV_HEADER);
        for r in &self.steps {
            let _ = writeln!(out, "{},{},{}", r.step, r.view, r.loss.csv_fields());
        }
        out
    }

    /// Equality of everything except wall time.
    pub fn same_run(&self, other: &Self) -> bool {
        self.steps == other.steps
            && self.final_loss == other.final_loss
            && self.final_metrics == other.final_metrics
            && self.status == other.status
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub map: PcaHairMap,
    pub report: FitReport,
}

struct Evaluation {
    loss: LossBreakdown,
    grad: Option<Vec<f64>>,
    render: RenderBuffers,
}

fn evaluate(model: &HairModel, pca: &PcaHairMap, view: &View, schedule: &FitSchedule, with_grad: bool) -> Result<Evaluation> {
    let hair = model.forward(pca)?;
    let splats = build_splats(&hair, &schedule.render).splats;
    let render = rasterize(&splats, &view.camera, &schedule.render);
    let options = RealLossOptions { undirected: schedule.undirected };
    let loss = real_loss(&render, &hair, &view.targets, &model.head, &schedule.weights, options)?;
    let grad = if with_grad && loss.breakdown.total.is_finite() {
        let mut points = rasterize_backward(&render, &hair, &splats, &view.camera, &schedule.render, &loss.pixel_grad)?;
        points.add_scaled(&loss.point_grad, 1.0);
        Some(model.backward(&points)?)
    } else {
        None
    };
    Ok(Evaluation { loss: loss.breakdown, grad, render })
}

/// Fits the coefficient map to the views.
///
/// Each step renders one view (sampled uniformly when there are several),
/// backpropagates the image loss plus penetration to the coefficients and
/// takes an AdamW step. During the first `coarse_steps` only the first
/// `coarse_components` coefficients of each texel move. Baldness is fixed.
pub fn fit_hairmap(init: &PcaHairMap, model: &HairModel, views: &[View], schedule: &FitSchedule) -> Result<FitResult> {
    fit_hairmap_observed(init, model, views, schedule, |_, _| {})
}

/// [`fit_hairmap`] that hands the map to `observer` after every update.
pub fn fit_hairmap_observed(
    init: &PcaHairMap,
    model: &HairModel,
    views: &[View],
    schedule: &FitSchedule,
    mut observer: impl FnMut(usize, &PcaHairMap),
) -> Result<FitResult> {
    let start = Instant::now();
    if views.is_empty() {
        return Err(Error::InvalidInput("fitting needs at least one view".into()));
    }
    for v in views {
        v.targets.validate()?;
        v.camera.validate()?;
        if v.targets.width != v.camera.width || v.targets.height != v.camera.height {
            return Err(shape_err("target maps do not match their camera's image size"));
        }
    }
    let c = model.num_components();
    schedule.validate(c)?;
    model.guides(init)?;

    let texels = init.texels();
    let scale: Vec<f64> = match &schedule.coefficient_scale {
        Some(s) => (0..texels * c).map(|i| s[i % c]).collect(),
        None => vec![1.0; texels * c],
    };
    let mut z: Vec<f64> = init.coeffs().iter().zip(&scale).map(|(g, s)| g / s).collect();
    let coarse_frozen: Vec<bool> = (0..texels * c).map(|i| i % c >= schedule.coarse_components).collect();
    let mut adam = AdamW::new(z.len(), schedule.learning_rate, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut map = init.clone();
    let mut steps = Vec::with_capacity(schedule.total_steps);
    let mut status = FitStatus::Completed;

    for step in 0..schedule.total_steps {
        let view = match views.len() {
            1 => 0,
            n if schedule.random_views => rng.random_range(0..n),
            n => step % n,
        };
        let eval = evaluate(model, &map, &views[view], schedule, true)?;
        let grad = match eval.grad {
            Some(g) if g.iter().all(|v| v.is_finite()) => g,
            _ => {
                status = FitStatus::Diverged { step };
                break;
            }
        };
        steps.push(StepRecord { step, view, loss: eval.loss });
        let gz: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| g * s).collect();
        let frozen = (step < schedule.coarse_steps).then_some(coarse_frozen.as_slice());
        let mut next = z.clone();
        adam.step(&mut next, &gz, frozen)?;
        if next.iter().any(|v| !v.is_finite()) {
            status = FitStatus::Diverged { step };
            break;
        }
        // Untouched entries keep their exact value; z * s need not round-trip.
        for (i, dst) in map.coeffs_mut().iter_mut().enumerate() {
            if next[i].to_bits() != z[i].to_bits() {
                *dst = next[i] * scale[i];
            }
        }
        z = next;
        observer(step, &map);
    }

    let mut final_loss = Vec::with_capacity(views.len());
    let mut final_metrics = Vec::with_capacity(views.len());
    for v in views {
        let e = evaluate(model, &map, v, schedule, false)?;
        final_metrics.push(eval_metrics(&e.render, &v.targets)?);
        final_loss.push(e.loss);
    }
    let report = FitReport { steps, final_loss, final_metrics, status, wall_time_s: start.elapsed().as_secs_f64() };
    Ok(FitResult { map, report })
}

/// Renders a coefficient map through the model with the tiled rasterizer.
pub fn render_map(model: &HairModel, pca: &PcaHairMap, cam: &CameraModel, config: &RenderConfig) -> Result<RenderBuffers> {
    let hair = model.forward(pca)?;
    Ok(rasterize(&build_splats(&hair, config).splats, cam, config))
}

/// Symmetric chamfer distances between two strand sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chamfer {
    /// Mean squared nearest-neighbour distance, averaged over both directions.
    pub points: f64,
    /// Mean `1 - |cos|` between the tangents of matched points.
    pub angle: f64,
}

/// Sets at or below this many samples are matched by exhaustive search.
pub const CHAMFER_EXACT_LIMIT: usize = 2000;

fn sample_points(strands: &[Strand], samples: usize, rng: &mut ChaCha8Rng) -> (Vec<Point>, Vec<Point>) {
    let mut pts = Vec::new();
    let mut tans = Vec::new();
    for s in strands {
        let (dirs, _) = segment_directions(s.points());
        for (j, p) in s.points().iter().enumerate() {
            pts.push(*p);
            tans.push(dirs[j.min(dirs.len() - 1)]);
        }
    }
    if pts.len() <= samples {
        return (pts, tans);
    }
    let mut idx = sample(rng, pts.len(), samples).into_vec();
    idx.sort_unstable();
    (idx.iter().map(|&i| pts[i]).collect(), idx.iter().map(|&i| tans[i]).collect())
}

/// Index of the nearest point in `to` for each point of `from`; exhaustive
/// search keeps the lowest index on ties.
fn nearest(from: &[Point], to: &[Point]) -> Vec<usize> {
    if from.len().max(to.len()) <= CHAMFER_EXACT_LIMIT {
        return from
            .iter()
            .map(|p| {
                let mut best = (f64::INFINITY, 0);
                for (k, q) in to.iter().enumerate() {
                    let d = (p - q).norm_squared();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1
            })
            .collect();
    }
    let mut tree: KdTree<f64, 3> = KdTree::new();
    for (k, q) in to.iter().enumerate() {
        tree.add(&[q.x, q.y, q.z], k as u64);
    }
    from.iter().map(|p| tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).item as usize).collect()
}

fn one_way(ap: &[Point], at: &[Point], bp: &[Point], bt: &[Point]) -> (f64, f64) {
    let nn = nearest(ap, bp);
    let (mut d, mut a) = (0.0, 0.0);
    for (i, &k) in nn.iter().enumerate() {
        d += (ap[i] - bp[k]).norm_squared();
        a += 1.0 - at[i].dot(&bt[k]).abs().min(1.0);
    }
    let n = ap.len() as f64;
    (d / n, a / n)
}

/// Chamfer on up to `samples` points drawn from each set (all points when
/// the set is smaller), with tangents from the strand segments.
pub fn chamfer_eval(pred: &[Strand], gt: &[Strand], samples: usize, seed: u64) -> Result<Chamfer> {
    if pred.is_empty() || gt.is_empty() || samples == 0 {
        return Err(Error::InvalidInput("chamfer needs non-empty strand sets and samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ap, at) = sample_points(pred, samples, &mut rng);
    let (bp, bt) = sample_points(gt, samples, &mut rng);
    let (d1, a1) = one_way(&ap, &at, &bp, &bt);
    let (d2, a2) = one_way(&bp, &bt, &ap, &at);
    Ok(Chamfer { points: 0.5 * (d1 + d2), angle: 0.5 * (a1 + a2) })
}
