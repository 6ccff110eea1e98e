use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::codec::{Point, Strand};
use crate::hairmap::{HairMap, RootGrid};
use crate::scalp::{CameraModel, HeadModel};

fn axis_camera(w: usize, h: usize, f: f64) -> CameraModel {
    CameraModel {
        fx: f,
        fy: f,
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width: w,
        height: h,
    }
}

fn hair_from(strands: Vec<Strand>) -> HairMap {
    let n = strands.len();
    let roots = RootGrid::from_head(&HeadModel::default(), n, 1);
    HairMap::new(roots, strands.into_iter().map(Some).collect()).unwrap()
}

fn random_hair(rng: &mut ChaCha8Rng, strands: usize, points: usize) -> HairMap {
    hair_from(
        (0..strands)
            .map(|_| {
                let mut p = Point::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(4.0..6.0));
                let mut pts = vec![p];
                for _ in 1..points {
                    p += Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                    pts.push(p);
                }
                Strand::new(pts).unwrap()
            })
            .collect(),
    )
}

fn perturbed(hair: &HairMap, texel: usize, j: usize, axis: usize, h: f64) -> HairMap {
    let strands = hair
        .strands()
        .iter()
        .enumerate()
        .map(|(t, s)| {
            s.as_ref().map(|s| {
                let mut pts = s.points().to_vec();
                if t == texel {
                    pts[j][axis] += h;
                }
                Strand::new(pts).unwrap()
            })
        })
        .collect();
    HairMap::new(hair.roots().clone(), strands).unwrap()
}

/// Smooth test loss over all three buffers plus its pixel gradients.
struct L2Target {
    sil: Vec<f64>,
    dir: Vec<[f64; 2]>,
    depth: Vec<f64>,
}

impl L2Target {
    fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        Self {
            sil: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            dir: (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
            depth: (0..n).map(|_| rng.random_range(4.0..6.0)).collect(),
        }
    }

    fn eval(&self, b: &RenderBuffers) -> (f64, PixelGradients) {
        let mut g = PixelGradients::zeros(b.pixels());
        let mut loss = 0.0;
        for i in 0..b.pixels() {
            let ds = b.silhouette[i] - self.sil[i];
            loss += ds * ds;
            g.silhouette[i] = 2.0 * ds;
            for c in 0..2 {
                let d = b.direction[i][c] - self.dir[i][c];
                loss += d * d;
                g.direction[i][c] = 2.0 * d;
            }
            if b.depth_valid[i] {
                let d = b.depth[i] - self.depth[i];
                loss += 0.1 * d * d;
                g.depth[i] = 0.2 * d;
            }
        }
        (loss, g)
    }
}

fn render_loss(hair: &HairMap, cam: &CameraModel, cfg: &RenderConfig, target: &L2Target) -> f64 {
    let set = build_splats(hair, cfg);
    target.eval(&rasterize(&set.splats, cam, cfg)).0
}

#[test]
fn single_opaque_splat_saturates_its_pixel() {
    let cam = axis_camera(32, 32, 40.0);
    let mid = cam.unproject(&Vector2::new(16.5, 16.5), 5.0);
    let cfg = RenderConfig { opacity: 1.0, cutoff: f64::INFINITY, epsilon: 0.05, ..RenderConfig::default() };
    let s = segment_splat(&(mid - Vector3::x() * 0.1), &(mid + Vector3::x() * 0.1), &cfg, 0, 0).unwrap();
    let b = rasterize(std::slice::from_ref(&s), &cam, &cfg);
    assert!((b.silhouette[16 * 32 + 16] - 1.0).abs() < 1e-12);
    assert!((b.depth[16 * 32 + 16] - 5.0).abs() < 1e-12);
}

#[test]
fn two_half_opaque_splats_compose() {
    let cam = axis_camera(32, 32, 40.0);
    let mid = cam.unproject(&Vector2::new(16.5, 16.5), 5.0);
    let cfg = RenderConfig { opacity: 0.5, cutoff: f64::INFINITY, epsilon: 0.05, ..RenderConfig::default() };
    let s = segment_splat(&(mid - Vector3::x() * 0.1), &(mid + Vector3::x() * 0.1), &cfg, 0, 0).unwrap();
    let b = rasterize(&[s.clone(), s], &cam, &cfg);
    assert!((b.silhouette[16 * 32 + 16] - 0.75).abs() < 1e-12);
}

#[test]
fn empty_scene_gives_zero_buffers() {
    let cam = axis_camera(8, 8, 10.0);
    for b in [rasterize(&[], &cam, &RenderConfig::default()), reference_rasterize(&[], &cam, &RenderConfig::default())] {
        assert!(b.silhouette.iter().all(|s| *s == 0.0));
        assert!(b.depth_valid.iter().all(|v| !v));
    }
}

#[test]
fn closed_form_footprint() {
    // Axis camera, splat on the optical axis at depth 5 along world x: Σ₂ is diagonal.
    let (f, w, h) = (40.0, 32, 32);
    let cam = axis_camera(w, h, f);
    let cfg = RenderConfig { opacity: 0.9, cutoff: f64::INFINITY, epsilon: 0.04, width_scale: 0.5, screen_blur: 0.3 };
    let len = 0.4;
    let mean = Point::new(0.0, 0.0, 5.0);
    let s = segment_splat(&(mean - Vector3::x() * len / 2.0), &(mean + Vector3::x() * len / 2.0), &cfg, 0, 0).unwrap();
    let b = reference_rasterize(&[s], &cam, &cfg);
    let sx2 = (f / 5.0 * cfg.width_scale * len).powi(2) + cfg.screen_blur;
    let sy2 = (f / 5.0 * cfg.epsilon).powi(2) + cfg.screen_blur;
    let (ux, uy) = (16.0, 16.0);
    for (i, j) in [(16, 16), (18, 16), (13, 17), (16, 15), (20, 14)] {
        let dx = i as f64 + 0.5 - ux;
        let dy = j as f64 + 0.5 - uy;
        let expect = 0.9 * (-0.5 * (dx * dx / sx2 + dy * dy / sy2)).exp();
        assert!((b.silhouette[j * w + i] - expect).abs() < 1e-12, "pixel ({i},{j})");
        // Screen tangent of a world-x segment is image +x.
        if expect > 1e-6 {
            let d = b.direction[j * w + i];
            assert!((d[0] - expect).abs() < 1e-12 && d[1].abs() < 1e-12);
        }
    }
}

#[test]
fn tiled_matches_reference_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cam = CameraModel::orbit(Point::new(0.0, 0.0, 5.0), 5.0, 0.3, 0.2, 30.0, 37, 29).unwrap();
    for _ in 0..5 {
        let hair = random_hair(&mut rng, 6, 8);
        let cfg = RenderConfig { epsilon: 0.05, ..RenderConfig::default() };
        let set = build_splats(&hair, &cfg);
        let a = rasterize(&set.splats, &cam, &cfg);
        let b = reference_rasterize(&set.splats, &cam, &cfg);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}

#[test]
fn buffers_bounded_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cam = axis_camera(24, 24, 20.0);
    let cfg = RenderConfig { epsilon: 0.08, ..RenderConfig::default() };
    let hair = random_hair(&mut rng, 8, 10);
    let set = build_splats(&hair, &cfg);
    let mut prev = RenderBuffers::zeros(24, 24);
    for k in 1..=set.splats.len() {
        let b = rasterize(&set.splats[..k], &cam, &cfg);
        for i in 0..b.pixels() {
            assert!((0.0..=1.0).contains(&b.silhouette[i]));
            let d = b.direction[i];
            assert!((d[0] * d[0] + d[1] * d[1]).sqrt() <= b.silhouette[i] + 1e-12);
            assert!(b.silhouette[i] >= prev.silhouette[i] - 1e-15);
        }
        prev = b;
    }
}

#[test]
fn permuting_inputs_is_deterministic_with_distinct_depths() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cam = axis_camera(24, 24, 20.0);
    let cfg = RenderConfig { epsilon: 0.08, ..RenderConfig::default() };
    let set = build_splats(&random_hair(&mut rng, 5, 6), &cfg);
    let a = rasterize(&set.splats, &cam, &cfg);
    let mut rev = set.splats.clone();
    rev.reverse();
    let b = rasterize(&rev, &cam, &cfg);
    assert!(a.max_abs_diff(&b) < 1e-12);
    // Same input order twice: bitwise identical.
    let c = rasterize(&set.splats, &cam, &cfg);
    assert_eq!(a.silhouette, c.silhouette);
    assert_eq!(a.depth, c.depth);
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cam = axis_camera(16, 16, 16.0);
    let cfg = RenderConfig { epsilon: 0.05, ..RenderConfig::default() };
    let hair = random_hair(&mut rng, 3, 5);
    let set = build_splats(&hair, &cfg);
    let b = rasterize(&set.splats, &cam, &cfg);
    let g = rasterize_backward(&b, &hair, &set.splats, &cam, &cfg, &PixelGradients::zeros(b.pixels())).unwrap();
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn backward_without_trace_is_a_state_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cam = axis_camera(16, 16, 16.0);
    let cfg = RenderConfig::default();
    let hair = random_hair(&mut rng, 2, 4);
    let set = build_splats(&hair, &cfg);
    let b = rasterize(&set.splats, &cam, &cfg).without_trace();
    let r = rasterize_backward(&b, &hair, &set.splats, &cam, &cfg, &PixelGradients::zeros(b.pixels()));
    assert!(matches!(r, Err(crate::Error::State(_))));
}

fn check_fd(hair: &HairMap, cam: &CameraModel, cfg: &RenderConfig, target: &L2Target, h: f64) {
    let set = build_splats(hair, cfg);
    let b = rasterize(&set.splats, cam, cfg);
    let (_, up) = target.eval(&b);
    let g = rasterize_backward(&b, hair, &set.splats, cam, cfg, &up).unwrap();
    let scale = g.max_abs();
    for (t, s) in hair.active() {
        for j in 0..s.len() {
            for a in 0..3 {
                let lp = render_loss(&perturbed(hair, t, j, a, h), cam, cfg, target);
                let lm = render_loss(&perturbed(hair, t, j, a, -h), cam, cfg, target);
                let fd = (lp - lm) / (2.0 * h);
                let an = g.get(t, j)[a];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6 * scale);
                assert!(rel < 1e-3, "texel {t} point {j} axis {a}: fd {fd} analytic {an}");
            }
        }
    }
}

#[test]
fn single_splat_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cam = axis_camera(20, 20, 24.0);
    let cfg = RenderConfig { epsilon: 0.06, cutoff: f64::INFINITY, ..RenderConfig::default() };
    let hair = hair_from(vec![Strand::new(vec![Point::new(-0.3, 0.1, 5.0), Point::new(0.35, -0.2, 5.4)]).unwrap()]);
    let target = L2Target::random(&mut rng, 400);
    check_fd(&hair, &cam, &cfg, &target, 1e-4);
}

#[test]
fn multi_splat_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let cam = CameraModel::orbit(Point::new(0.0, 0.0, 5.0), 5.0, 0.4, -0.3, 24.0, 20, 18).unwrap();
    let cfg = RenderConfig { epsilon: 0.07, cutoff: f64::INFINITY, opacity: 0.8, ..RenderConfig::default() };
    let hair = random_hair(&mut rng, 3, 4);
    let target = L2Target::random(&mut rng, 360);
    check_fd(&hair, &cam, &cfg, &target, 1e-5);
}

#[test]
fn gradients_invariant_under_rigid_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cam = axis_camera(20, 20, 24.0);
    let cfg = RenderConfig { epsilon: 0.06, ..RenderConfig::default() };
    let hair = random_hair(&mut rng, 3, 5);
    let target = L2Target::random(&mut rng, 400);
    let shift = Vector3::new(0.7, -1.3, 2.1);
    let moved = hair_from(
        hair.active()
            .map(|(_, s)| Strand::new(s.points().iter().map(|p| p + shift).collect()).unwrap())
            .collect(),
    );
    let mut cam2 = cam.clone();
    cam2.translation -= cam.rotation * shift;
    let grads = |h: &HairMap, c: &CameraModel| {
        let set = build_splats(h, &cfg);
        let b = rasterize(&set.splats, c, &cfg);
        let (_, up) = target.eval(&b);
        rasterize_backward(&b, h, &set.splats, c, &cfg, &up).unwrap()
    };
    let (a, b) = (grads(&hair, &cam), grads(&moved, &cam2));
    for (x, y) in flatten_gradients(&a).iter().zip(flatten_gradients(&b)) {
        assert!((x - y).amax() < 1e-8 * (1.0 + x.amax()));
    }
}

#[test]
fn reference_trace_supports_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let cam = axis_camera(20, 20, 24.0);
    let cfg = RenderConfig { epsilon: 0.06, ..RenderConfig::default() };
    let hair = random_hair(&mut rng, 4, 5);
    let target = L2Target::random(&mut rng, 400);
    let set = build_splats(&hair, &cfg);
    let a = rasterize(&set.splats, &cam, &cfg);
    let b = reference_rasterize(&set.splats, &cam, &cfg);
    let ga = rasterize_backward(&a, &hair, &set.splats, &cam, &cfg, &target.eval(&a).1).unwrap();
    let gb = rasterize_backward(&b, &hair, &set.splats, &cam, &cfg, &target.eval(&b).1).unwrap();
    for (x, y) in flatten_gradients(&ga).iter().zip(flatten_gradients(&gb)) {
        assert!((x - y).amax() < 1e-9 * (1.0 + x.amax()));
    }
}

#[test]
fn facing_strand_is_visible_and_walled_strand_is_not() {
    let cam = axis_camera(32, 32, 32.0);
    let cfg = RenderConfig { epsilon: 0.05, ..RenderConfig::default() };
    let line = |z: f64, x: f64| Strand::new((0..10).map(|j| Point::new(x, -0.5 + 0.1 * j as f64, z)).collect()).unwrap();
    let w = visibility_weights(&hair_from(vec![line(5.0, 0.0)]), &cam, &cfg);
    assert!(w[0].as_ref().unwrap().iter().all(|v| *v == VISIBLE_WEIGHT));

    // Opaque wall of densely packed strands in front.
    let mut strands: Vec<Strand> = (0..41).map(|k| line(3.0, -0.6 + 0.03 * k as f64)).collect();
    strands.push(line(5.0, 0.0));
    let hair = hair_from(strands);
    let w = visibility_weights(&hair, &cam, &cfg);
    assert!(w[41].as_ref().unwrap().iter().all(|v| *v == HIDDEN_WEIGHT));
}
