//! Rotations and rigid transforms.
//!
//! Conventions used across the crate: camera frame is x right, y down,
//! z forward; `RigidTransform` is camera-to-world (or sensor-to-world)
//! unless a function says otherwise; quaternions are Hamilton, w first.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("matrix is not a rotation: {0}")]
    NotARotation(&'static str),
}

/// 3x3 right-handed orthonormal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality (`R^T R = I` and `det R = +1`, both to 1e-9)
    /// before accepting the matrix.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let err = (m.transpose() * m - Matrix3::identity()).norm();
        if !err.is_finite() || err > 1e-9 {
            return Err(GeomError::NotARotation("R^T R != I"));
        }
        if (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeomError::NotARotation("det != +1"));
        }
        Ok(Rotation(m))
    }

    /// For matrices that are orthonormal by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation about the y axis (positive turns +z toward +x).
    pub fn yaw(angle: f64) -> Self {
        Rotation(*Rotation3::from_axis_angle(&Vector3::y_axis(), angle).matrix())
    }

    /// Rotation about the x axis.
    pub fn pitch(angle: f64) -> Self {
        Rotation(*Rotation3::from_axis_angle(&Vector3::x_axis(), angle).matrix())
    }

    /// Rotation about the z axis.
    pub fn roll(angle: f64) -> Self {
        Rotation(*Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix())
    }

    /// Exponential map: axis-angle vector to rotation.
    pub fn exp(w: Vector3<f64>) -> Self {
        Rotation(*Rotation3::from_scaled_axis(w).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Applies the inverse rotation without forming the transpose matrix.
    pub fn apply_inverse(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.tr_mul(v)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Angle of `self^T * other` in radians, in [0, pi].
    ///
    /// Computed as atan2(sin, cos) from the antisymmetric part and the
    /// trace; acos of the trace alone cannot resolve angles below ~1e-8.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let r = self.0.transpose() * other.0;
        let s = 0.5
            * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
        let c = (r.trace() - 1.0) / 2.0;
        s.atan2(c)
    }

    /// Hamilton quaternion as (w, x, y, z).
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    /// From a Hamilton quaternion (w, x, y, z); normalizes the input.
    pub fn from_quaternion(wxyz: [f64; 4]) -> Result<Self, GeomError> {
        let [w, x, y, z] = wxyz;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeomError::NotARotation("zero quaternion"));
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Ok(Rotation(*q.to_rotation_matrix().matrix()))
    }
}

/// SE(3) pose: `world = rotation * local + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply_inverse(&(p - self.translation))
    }

    pub fn inverse(&self) -> Self {
        let rot = self.rotation.inverse();
        let t = -rot.apply(&self.translation);
        RigidTransform { rotation: rot, translation: t }
    }

    /// `self` applied after `other`: `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reject_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(m).is_err());
        // reflection: orthonormal but det = -1
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn yaw_turns_forward_toward_x() {
        let r = Rotation::yaw(std::f64::consts::FRAC_PI_2);
        let v = r.apply(&Vector3::z());
        assert_relative_eq!(v, Vector3::x(), epsilon = 1e-12);
    }

    #[test]
    fn quaternion_round_trip() {
        let r = Rotation::yaw(0.7).compose(&Rotation::pitch(-0.3)).compose(&Rotation::roll(1.1));
        let q = r.to_quaternion();
        let r2 = Rotation::from_quaternion(q).unwrap();
        assert!(r.angle_to(&r2) < 1e-12);
        let n: f64 = q.iter().map(|c| c * c).sum();
        assert_relative_eq!(n, 1.0, epsilon = 1e-12);
        assert!(q[0] >= 0.0);
    }

    #[test]
    fn transform_inverse_compose() {
        let t = RigidTransform::new(Rotation::yaw(0.4), Vector3::new(1.0, -2.0, 0.5));
        let p = Vector3::new(0.3, 0.7, -1.9);
        let q = t.apply(&p);
        assert_relative_eq!(t.apply_inverse(&q), p, epsilon = 1e-12);
        let id = t.compose(&t.inverse());
        assert!(id.rotation.angle_to(&Rotation::identity()) < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn exp_matches_axis_angle() {
        let w = Vector3::new(0.0, 0.3, 0.0);
        let r = Rotation::exp(w);
        assert!(r.angle_to(&Rotation::yaw(0.3)) < 1e-12);
    }
}
