//! Analytic head model, scalp chart and pinhole camera.
//!
//! The head is an axis-aligned ellipsoid. The scalp is the spherical cap of
//! polar angles `[cap.0, cap.1]` (measured from the head's +z axis), charted by
//! `u -> azimuth = 2πu` and `v -> polar = cap.1 - v (cap.1 - cap.0)`, so `v = 1`
//! is the crown. `v` is clamped to `[0.001, 0.999]` to keep tangents regular.
//!
//! Camera convention: right-handed camera frame looking down +z, image y down,
//! pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.

use std::f64::consts::PI;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::codec::Point;
use crate::error::{Error, Result};

pub const CHART_V_MIN: f64 = 0.001;
pub const CHART_V_MAX: f64 = 0.999;
/// Points closer than this to the camera plane are not projected.
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadModel {
    pub center: Point,
    pub radii: Vector3<f64>,
    /// Polar-angle range `(min, max)` of the scalp cap, radians from +z.
    pub cap: (f64, f64),
}

impl Default for HeadModel {
    fn default() -> Self {
        Self {
            center: Point::zeros(),
            radii: Vector3::new(0.9, 1.0, 1.1),
            cap: (0.0, 1.75),
        }
    }
}

/// Orthonormal root frame: columns are `(tangent_u, tangent_v, normal)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Frame {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.tangent_u, self.tangent_v, self.normal])
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.tangent_u * local.x + self.tangent_v * local.y + self.normal * local.z
    }

    pub fn to_local(&self, world: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(self.tangent_u.dot(world), self.tangent_v.dot(world), self.normal.dot(world))
    }
}

impl HeadModel {
    pub fn sphere(center: Point, radius: f64) -> Self {
        Self { center, radii: Vector3::repeat(radius), cap: (0.0, 1.75) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radii.iter().all(|r| *r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput("head radii must be positive".into()));
        }
        let (lo, hi) = self.cap;
        if !(0.0..=PI).contains(&lo) || !(0.0..=PI).contains(&hi) || lo >= hi {
            return Err(Error::InvalidInput(format!("bad scalp cap range ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Signed distance, negative inside.
    ///
    /// Uses the gradient-normalized first-order estimate
    /// `f/|∇f|` with `f = |q| - 1`, `q = (p - c)/r`, i.e.
    /// `|q| (|q| - 1) / |(p - c)/r²|`. Exact for spheres.
    pub fn sdf(&self, p: &Point) -> f64 {
        head_sdf(self, p)
    }

    /// Gradient of [`HeadModel::sdf`].
    pub fn sdf_gradient(&self, p: &Point) -> Vector3<f64> {
        let d = p - self.center;
        let r2 = self.radii.component_mul(&self.radii);
        let q = d.component_div(&self.radii);
        let w = d.component_div(&r2);
        let k0 = q.norm();
        let k1 = w.norm();
        if k1 < 1e-300 || k0 < 1e-300 {
            return Vector3::zeros();
        }
        // ∇k0 = w / k0, ∇k1 = (w / r²) / k1
        let grad_k0 = w / k0;
        let grad_k1 = w.component_div(&r2) / k1;
        let num = k0 * (k0 - 1.0);
        (grad_k0 * (2.0 * k0 - 1.0)) / k1 - grad_k1 * (num / (k1 * k1))
    }

    /// Surface position and root frame at chart coordinates `(u, v)`.
    pub fn scalp_point(&self, u: f64, v: f64) -> (Point, Frame) {
        scalp_point(self, u, v)
    }
}

pub fn head_sdf(head: &HeadModel, p: &Point) -> f64 {
    let d = p - head.center;
    let q = d.component_div(&head.radii);
    let w = d.component_div(&head.radii.component_mul(&head.radii));
    let k0 = q.norm();
    let k1 = w.norm();
    if k1 < 1e-300 {
        return -head.radii.min();
    }
    k0 * (k0 - 1.0) / k1
}

pub fn scalp_point(head: &HeadModel, u: f64, v: f64) -> (Point, Frame) {
    let v = v.clamp(CHART_V_MIN, CHART_V_MAX);
    let (lo, hi) = head.cap;
    let theta = hi - v * (hi - lo);
    let phi = 2.0 * PI * u;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let omega = Vector3::new(st * cp, st * sp, ct);
    let r = &head.radii;
    let position = head.center + r.component_mul(&omega);
    let normal = omega.component_div(r).normalize();
    let du = r.component_mul(&Vector3::new(-sp, cp, 0.0));
    let tu = (du - normal * normal.dot(&du)).normalize();
    let tv = normal.cross(&tu);
    (position, Frame { tangent_u: tu, tangent_v: tv, normal })
}

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub valid: bool,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(eye: Point, target: Point, up: Vector3<f64>, focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("camera eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::InvalidInput("camera up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let cam = Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on a sphere of radius `distance` around `target`, at the given
    /// azimuth and elevation (radians, elevation measured from the xy-plane).
    pub fn orbit(target: Point, distance: f64, azimuth: f64, elevation: f64, focal: f64, width: usize, height: usize) -> Result<Self> {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        let eye = target + Vector3::new(ce * ca, ce * sa, se) * distance;
        let up = if ce.abs() < 1e-6 { Vector3::new(-ca, -sa, 0.0) } else { Vector3::z() };
        Self::look_at(eye, target, up, focal, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be non-zero".into()));
        }
        let g = self.rotation * self.rotation.transpose();
        if (g - Matrix3::identity()).amax() > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Point) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Point {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn project(&self, p: &Point) -> Projection {
        project(self, p)
    }

    /// Jacobian of the pixel coordinates w.r.t. camera-space position.
    pub fn projection_jacobian(&self, xc: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / xc.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * xc.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * xc.y * iz * iz,
        )
    }

    /// World point at `pixel` with camera-space depth `depth`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Point {
        let xc = Vector3::new((pixel.x - self.cx) / self.fx * depth, (pixel.y - self.cy) / self.fy * depth, depth);
        self.rotation.transpose() * (xc - self.translation)
    }
}

pub fn project(cam: &CameraModel, p: &Point) -> Projection {
    let xc = cam.to_camera(p);
    let valid = xc.z > NEAR_PLANE;
    let pixel = if valid {
        Vector2::new(cam.fx * xc.x / xc.z + cam.cx, cam.fy * xc.y / xc.z + cam.cy)
    } else {
        Vector2::new(f64::NAN, f64::NAN)
    };
    Projection { pixel, depth: xc.z, valid }
}
