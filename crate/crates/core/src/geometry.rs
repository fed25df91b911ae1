//! Quaternion and SE(3) primitives shared by every other module.
//!
//! Conventions used throughout the crate:
//! - Quaternions are Hamilton, scalar-first `(w, x, y, z)`, passive rotations,
//!   canonicalized to `w >= 0` on construction.
//! - Poses compose left-to-right: `a.compose(&b)` maps b-frame coordinates
//!   through b into a's reference frame.
//! - Local perturbations are right-applied: translation additively, rotation
//!   as `q * exp(delta_theta)` with `delta_theta` in the body frame.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4, Vector6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// The SE(3) logarithm is ambiguous on the `pi` rotation branch.
    #[error("rotation angle {angle} is within {margin} of pi; log branch ambiguous")]
    AngleNearPi { angle: f64, margin: f64 },
}

/// Margin around `pi` where `se3_log` refuses to pick a branch.
pub const LOG_BRANCH_MARGIN: f64 = 1e-6;

/// Skew-symmetric (cross-product) matrix of a 3-vector.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion, Hamilton convention, scalar-first storage.
///
/// Construction always renormalizes and canonicalizes to `w >= 0` so that
/// `q` and `-q` collapse to one representative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Normalizes and canonicalizes the given components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        assert!(norm > 0.0, "cannot normalize a zero quaternion");
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        // Skip the division when already unit so that exact identities
        // (e.g. multiplication by the identity quaternion) stay bit-exact.
        let s = if (norm - 1.0).abs() <= f64::EPSILON { sign } else { sign / norm };
        Self { w: w * s, x: x * s, y: y * s, z: z * s }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = axis.normalize();
        let half = 0.5 * angle;
        let s = half.sin();
        Self::new(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Exponential map: rotation vector (axis * angle) to quaternion.
    pub fn exp_map(rotvec: &Vector3<f64>) -> Self {
        let theta_sq = rotvec.norm_squared();
        let (w, imag) = if theta_sq < 1e-16 {
            // Taylor: cos(t/2) ~ 1 - t^2/8, sin(t/2)/t ~ 1/2 - t^2/48
            (1.0 - 0.125 * theta_sq, rotvec * (0.5 - theta_sq / 48.0))
        } else {
            let theta = theta_sq.sqrt();
            let half = 0.5 * theta;
            (half.cos(), rotvec * (half.sin() / theta))
        };
        Self::new(w, imag.x, imag.y, imag.z)
    }

    /// Logarithm map: rotation vector with angle in `[0, pi]`.
    pub fn log_map(&self) -> Vector3<f64> {
        let imag = Vector3::new(self.x, self.y, self.z);
        let imag_norm = imag.norm();
        if imag_norm < 1e-12 {
            // w >= 0 by canonicalization, so the factor is well conditioned.
            imag * (2.0 / self.w)
        } else {
            let theta = 2.0 * imag_norm.atan2(self.w);
            imag * (theta / imag_norm)
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Components as `(w, x, y, z)`.
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(&self) -> Self {
        // Unit norm: conjugate. Stays canonical because w is unchanged.
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Rotates a vector: `q v q^-1`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Left product matrix `L(q)` such that `q (x) p = L(q) p_vec`.
    pub fn left_product_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Right product matrix `R(q)` such that `p (x) q = R(q) p_vec`.
    pub fn right_product_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let imag_norm = Vector3::new(self.x, self.y, self.z).norm();
        2.0 * imag_norm.atan2(self.w)
    }
}

/// Hamilton product of two unit quaternions, renormalized and canonicalized.
pub fn quat_mul(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Rigid transform on SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    /// `self * other` as frame composition.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: quat_mul(&self.rotation, &other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose { rotation: rot_inv, translation: -rot_inv.rotate(&self.translation) }
    }

    /// Maps a point expressed in this pose's frame into the reference frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of `self^-1 * other` plus translation distance.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.rotation.angle(), rel.translation.norm())
    }
}

/// Screw generator `(v, omega)`; for a revolute joint `v = -omega x q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl Twist {
    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { v, omega }
    }

    /// Twist of a revolute joint with unit axis `omega` through point `q`.
    pub fn revolute(omega: &Vector3<f64>, q: &Vector3<f64>) -> Self {
        let omega = omega.normalize();
        Self { v: -omega.cross(q), omega }
    }

    /// 4x4 hat matrix of the twist.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.omega));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m
    }
}

/// Local perturbation `(delta_t, delta_theta)` used by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl TangentVector {
    pub fn zero() -> Self {
        Self { translation: Vector3::zeros(), rotation: Vector3::zeros() }
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.translation);
        v.fixed_rows_mut::<3>(3).copy_from(&self.rotation);
        v
    }

    pub fn norm(&self) -> f64 {
        (self.translation.norm_squared() + self.rotation.norm_squared()).sqrt()
    }
}

/// Right jacobian of SO(3) at rotation vector `phi`:
/// `exp(phi + d) = exp(phi) * exp(Jr(phi) d)` to first order.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let hat = skew(phi);
    let hat_sq = hat * hat;
    let (a, b) = if theta_sq < 1e-12 {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        ((1.0 - theta.cos()) / theta_sq, (theta - theta.sin()) / (theta_sq * theta))
    };
    Matrix3::identity() - a * hat + b * hat_sq
}

/// Translation jacobian `V` of the SE(3) exponential for rotation vector `phi`.
fn exp_translation_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let hat = skew(phi);
    let hat_sq = hat * hat;
    let (a, b) = if theta_sq < 1e-12 {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        ((1.0 - theta.cos()) / theta_sq, (theta - theta.sin()) / (theta_sq * theta))
    };
    Matrix3::identity() + a * hat + b * hat_sq
}

fn exp_translation_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let hat = skew(phi);
    let hat_sq = hat * hat;
    let c = if theta_sq < 1e-12 {
        1.0 / 12.0 + theta_sq / 720.0
    } else {
        let theta = theta_sq.sqrt();
        (1.0 - 0.5 * theta * (1.0 + theta.cos()) / theta.sin()) / theta_sq
    };
    Matrix3::identity() - 0.5 * hat + c * hat_sq
}

/// Closed-form exponential of the scaled twist `xi * theta`.
///
/// For a zero `omega` this degenerates to the pure translation `theta * v`
/// (prismatic limit); otherwise `omega` is expected to be unit norm.
pub fn se3_exp(xi: &Twist, theta: f64) -> Pose {
    let phi = xi.omega * theta;
    let rotation = UnitQuaternion::exp_map(&phi);
    let translation = exp_translation_jacobian(&phi) * (xi.v * theta);
    Pose { rotation, translation }
}

/// Principal-branch inverse of [`se3_exp`].
///
/// Returns a twist with unit `omega` (or zero `omega` for pure translations,
/// in which case `theta` is the translation length).
pub fn se3_log(pose: &Pose) -> Result<(Twist, f64), GeometryError> {
    let phi = pose.rotation.log_map();
    let theta = phi.norm();
    if theta > std::f64::consts::PI - LOG_BRANCH_MARGIN {
        return Err(GeometryError::AngleNearPi { angle: theta, margin: LOG_BRANCH_MARGIN });
    }
    if theta < 1e-12 {
        let t_norm = pose.translation.norm();
        if t_norm < 1e-12 {
            return Ok((Twist::new(Vector3::zeros(), Vector3::zeros()), 0.0));
        }
        return Ok((Twist::new(pose.translation / t_norm, Vector3::zeros()), t_norm));
    }
    let omega = phi / theta;
    let v = exp_translation_jacobian_inv(&phi) * pose.translation / theta;
    Ok((Twist::new(v, omega), theta))
}

/// Right-perturbation retraction: translation additive, rotation
/// right-multiplied by the exponential of the rotational part.
pub fn retract(pose: &Pose, delta: &TangentVector) -> Pose {
    Pose {
        rotation: quat_mul(&pose.rotation, &UnitQuaternion::exp_map(&delta.rotation)),
        translation: pose.translation + delta.translation,
    }
}

/// Inverse of [`retract`]: `retract(a, local_diff(a, b)) == b`.
pub fn local_diff(a: &Pose, b: &Pose) -> TangentVector {
    TangentVector {
        translation: b.translation - a.translation,
        rotation: quat_mul(&a.rotation.inverse(), &b.rotation).log_map(),
    }
}
