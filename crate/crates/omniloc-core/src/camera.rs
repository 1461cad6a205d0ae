//! Camera models: equirectangular panorama, pinhole, and double-sphere
//! fisheye. Each model owns an exact projection (bearing -> pixel) and
//! unprojection (pixel -> bearing).
//!
//! Continuous pixel coordinates: the image spans `[0, width] x [0, height]`
//! and pixel centers sit at integer + 0.5. Camera frame: x right, y down,
//! z forward. Equirectangular mapping is fixed as
//! `theta = 2*pi*(u/width) - pi`, `phi = pi/2 - pi*(v/height)`,
//! `d = (cos(phi)*sin(theta), -sin(phi), cos(phi)*cos(theta))`.

use nalgebra::Vector3;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("horizontal fov {0} rad outside (0, pi)")]
    InvalidFov(f64),
    #[error("pixel ({u}, {v}) outside the image rectangle")]
    OutOfImage { u: f64, v: f64 },
    #[error("pixel ({u}, {v}) outside the unprojection domain")]
    OutsideDomain { u: f64, v: f64 },
    #[error("invalid camera parameters: {0}")]
    InvalidParams(String),
    #[error("unknown camera preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot normalize a near-zero vector")]
    ZeroVector,
}

/// Unit direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Vector3<f64>);

impl Bearing {
    /// Normalizes the input; rejects near-zero vectors.
    pub fn new(v: Vector3<f64>) -> Result<Self, CameraError> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(CameraError::ZeroVector);
        }
        Ok(Bearing(v / n))
    }

    /// For vectors already unit-norm by construction.
    pub(crate) fn unit_unchecked(v: Vector3<f64>) -> Self {
        Bearing(v)
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Angle to another bearing, radians in [0, pi].
    pub fn angle_to(&self, other: &Bearing) -> f64 {
        // atan2 keeps full precision for near-parallel directions
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}

/// 2:1 equirectangular panorama camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquirectModel {
    pub width: u32,
    pub height: u32,
}

impl EquirectModel {
    pub fn new(width: u32, height: u32) -> Result<Self, CameraError> {
        if width == 0 || width != 2 * height {
            return Err(CameraError::InvalidParams(format!(
                "equirect requires 2:1 dimensions, got {width}x{height}"
            )));
        }
        Ok(EquirectModel { width, height })
    }

    pub fn project(&self, d: &Bearing) -> (f64, f64) {
        let v = d.vector();
        let theta = v.x.atan2(v.z);
        let phi = (-v.y).clamp(-1.0, 1.0).asin();
        let u = (theta + PI) / (2.0 * PI) * self.width as f64;
        let vv = (PI / 2.0 - phi) / PI * self.height as f64;
        (u, vv)
    }

    pub fn unproject(&self, u: f64, v: f64) -> Result<Bearing, CameraError> {
        if !inside(u, v, self.width, self.height) {
            return Err(CameraError::OutOfImage { u, v });
        }
        let theta = 2.0 * PI * (u / self.width as f64) - PI;
        let phi = PI / 2.0 - PI * (v / self.height as f64);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        Ok(Bearing::unit_unchecked(Vector3::new(cp * st, -sp, cp * ct)))
    }
}

/// Undistorted pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeModel {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(CameraError::InvalidParams("focal length must be positive".into()));
        }
        if cx <= 0.0 || cx >= width as f64 || cy <= 0.0 || cy >= height as f64 {
            return Err(CameraError::InvalidParams("principal point outside image".into()));
        }
        Ok(PinholeModel { width, height, fx, fy, cx, cy })
    }

    pub fn project(&self, d: &Bearing) -> Option<(f64, f64)> {
        let v = d.vector();
        if v.z <= 0.0 {
            return None;
        }
        let u = self.fx * v.x / v.z + self.cx;
        let vv = self.fy * v.y / v.z + self.cy;
        inside(u, vv, self.width, self.height).then_some((u, vv))
    }

    pub fn unproject(&self, u: f64, v: f64) -> Result<Bearing, CameraError> {
        if !inside(u, v, self.width, self.height) {
            return Err(CameraError::OutOfImage { u, v });
        }
        let mx = (u - self.cx) / self.fx;
        let my = (v - self.cy) / self.fy;
        Bearing::new(Vector3::new(mx, my, 1.0))
    }
}

/// Double-sphere fisheye camera; supports fields of view beyond 180 degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleSphereModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub xi: f64,
    pub alpha: f64,
}

impl DoubleSphereModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        xi: f64,
        alpha: f64,
    ) -> Result<Self, CameraError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(CameraError::InvalidParams("focal length must be positive".into()));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(CameraError::InvalidParams(format!("alpha {alpha} outside [0, 1)")));
        }
        if !xi.is_finite() {
            return Err(CameraError::InvalidParams("xi must be finite".into()));
        }
        Ok(DoubleSphereModel { width, height, fx, fy, cx, cy, xi, alpha })
    }

    /// Boundary of the projection validity region: a direction projects only
    /// if `z > -w2 * ||p||`.
    fn w2(&self) -> f64 {
        let w1 = if self.alpha <= 0.5 {
            self.alpha / (1.0 - self.alpha)
        } else {
            (1.0 - self.alpha) / self.alpha
        };
        (w1 + self.xi) / (2.0 * w1 * self.xi + self.xi * self.xi + 1.0).sqrt()
    }

    pub fn project(&self, d: &Bearing) -> Option<(f64, f64)> {
        let p = d.vector();
        let d1 = p.norm();
        if p.z <= -self.w2() * d1 {
            return None;
        }
        let z2 = self.xi * d1 + p.z;
        let d2 = (p.x * p.x + p.y * p.y + z2 * z2).sqrt();
        let denom = self.alpha * d2 + (1.0 - self.alpha) * z2;
        if denom <= 1e-12 {
            return None;
        }
        let u = self.fx * p.x / denom + self.cx;
        let v = self.fy * p.y / denom + self.cy;
        inside(u, v, self.width, self.height).then_some((u, v))
    }

    pub fn unproject(&self, u: f64, v: f64) -> Result<Bearing, CameraError> {
        if !inside(u, v, self.width, self.height) {
            return Err(CameraError::OutOfImage { u, v });
        }
        let mx = (u - self.cx) / self.fx;
        let my = (v - self.cy) / self.fy;
        let r2 = mx * mx + my * my;
        if self.alpha > 0.5 && r2 > 1.0 / (2.0 * self.alpha - 1.0) {
            return Err(CameraError::OutsideDomain { u, v });
        }
        let mz = (1.0 - self.alpha * self.alpha * r2)
            / (self.alpha * (1.0 - (2.0 * self.alpha - 1.0) * r2).max(0.0).sqrt() + 1.0 - self.alpha);
        let coeff = (mz * self.xi + (mz * mz + (1.0 - self.xi * self.xi) * r2).sqrt()) / (mz * mz + r2);
        Bearing::new(Vector3::new(coeff * mx, coeff * my, coeff * mz - self.xi))
    }
}

/// Tagged union over the three camera families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraModel {
    Equirect(EquirectModel),
    Pinhole(PinholeModel),
    DoubleSphere(DoubleSphereModel),
}

impl CameraModel {
    pub fn width(&self) -> u32 {
        match self {
            CameraModel::Equirect(m) => m.width,
            CameraModel::Pinhole(m) => m.width,
            CameraModel::DoubleSphere(m) => m.width,
        }
    }

    pub fn height(&self) -> u32 {
        match self {
            CameraModel::Equirect(m) => m.height,
            CameraModel::Pinhole(m) => m.height,
            CameraModel::DoubleSphere(m) => m.height,
        }
    }

    /// Pixel for a bearing, or `None` when the direction is not visible
    /// (behind a pinhole, beyond the double-sphere validity region, or
    /// landing outside the image rectangle). Equirect projection is total.
    pub fn project(&self, d: &Bearing) -> Option<(f64, f64)> {
        match self {
            CameraModel::Equirect(m) => Some(m.project(d)),
            CameraModel::Pinhole(m) => m.project(d),
            CameraModel::DoubleSphere(m) => m.project(d),
        }
    }

    /// Unit bearing for a continuous pixel inside the image rectangle.
    pub fn unproject(&self, u: f64, v: f64) -> Result<Bearing, CameraError> {
        match self {
            CameraModel::Equirect(m) => m.unproject(u, v),
            CameraModel::Pinhole(m) => m.unproject(u, v),
            CameraModel::DoubleSphere(m) => m.unproject(u, v),
        }
    }
}

/// Pinhole with square pixels from a horizontal field of view:
/// `fx = fy = (width/2) / tan(hfov/2)`, principal point at the image center.
pub fn pinhole_from_fov(width: u32, height: u32, hfov: f64) -> Result<PinholeModel, CameraError> {
    if !(hfov > 0.0 && hfov < PI) {
        return Err(CameraError::InvalidFov(hfov));
    }
    let fx = (width as f64 / 2.0) / (hfov / 2.0).tan();
    PinholeModel::new(width, height, fx, fx, width as f64 / 2.0, height as f64 / 2.0)
}

/// Double-sphere with square pixels sized so the ray at `hfov/2` off the
/// axis lands on the horizontal image edge, for a fixed (xi, alpha) pair.
pub fn double_sphere_from_fov(
    width: u32,
    height: u32,
    hfov: f64,
    xi: f64,
    alpha: f64,
) -> Result<DoubleSphereModel, CameraError> {
    if !(hfov > 0.0 && hfov < 2.0 * PI) {
        return Err(CameraError::InvalidFov(hfov));
    }
    let (s, c) = (hfov / 2.0).sin_cos();
    let z2 = xi + c;
    let d2 = (s * s + z2 * z2).sqrt();
    let denom = alpha * d2 + (1.0 - alpha) * z2;
    if denom <= 0.0 {
        return Err(CameraError::InvalidParams(format!(
            "fov {:.1} deg not representable with xi={xi}, alpha={alpha}",
            hfov.to_degrees()
        )));
    }
    let fx = (width as f64 / 2.0) * denom / s;
    let m = DoubleSphereModel::new(width, height, fx, fx, width as f64 / 2.0, height as f64 / 2.0, xi, alpha)?;
    // the boundary ray itself must sit inside the validity region
    if c <= -m.w2() {
        return Err(CameraError::InvalidParams(format!(
            "fov {:.1} deg exceeds the validity region of xi={xi}, alpha={alpha}",
            hfov.to_degrees()
        )));
    }
    Ok(m)
}

/// Built-in camera presets.
///
/// `equirect` 6144x3072; `pinhole-85` 1920x1200; `fisheye-120/150/195`
/// 1280x1024 double-sphere with xi fixed at -0.2 / 0.0 / 0.5 and alpha at
/// 0.25 / 0.40 / 0.60. All five are overridable via preset files.
pub fn preset(name: &str) -> Result<CameraModel, CameraError> {
    match name {
        "equirect" => Ok(CameraModel::Equirect(EquirectModel::new(6144, 3072)?)),
        "pinhole-85" => Ok(CameraModel::Pinhole(pinhole_from_fov(1920, 1200, 85f64.to_radians())?)),
        "fisheye-120" => Ok(CameraModel::DoubleSphere(double_sphere_from_fov(
            1280,
            1024,
            120f64.to_radians(),
            -0.2,
            0.25,
        )?)),
        "fisheye-150" => Ok(CameraModel::DoubleSphere(double_sphere_from_fov(
            1280,
            1024,
            150f64.to_radians(),
            0.0,
            0.40,
        )?)),
        "fisheye-195" => Ok(CameraModel::DoubleSphere(double_sphere_from_fov(
            1280,
            1024,
            195f64.to_radians(),
            0.5,
            0.60,
        )?)),
        other => Err(CameraError::UnknownPreset(other.to_string())),
    }
}

pub const PRESET_NAMES: [&str; 5] = ["equirect", "pinhole-85", "fisheye-120", "fisheye-150", "fisheye-195"];

fn inside(u: f64, v: f64, width: u32, height: u32) -> bool {
    u.is_finite() && v.is_finite() && u >= 0.0 && u <= width as f64 && v >= 0.0 && v <= height as f64
}
