//! Pinhole projection, inverse-depth feature parameterization, and the
//! reprojection residual between an anchor observation and a target frame.
//!
//! All residuals live in normalized image-plane coordinates; pixel noise is
//! converted through the focal length where needed. A feature is anchored at
//! its first observing frame and parameterized by the inverse depth along
//! that observation ray.

use crate::geometry::{skew, Pose};
use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};
use thiserror::Error;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Features farther than `1 / LAMBDA_MIN` meters are clamped.
pub const LAMBDA_MIN: f64 = 1e-3;

/// Camera-frame points with `z` at or below this are behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("insufficient parallax (baseline {baseline} m over depth ~{depth} m)")]
    InsufficientParallax { baseline: f64, depth: f64 },
}

/// Pinhole intrinsics; the simulator and estimator share these as ground
/// truth, and pixel-unit noise is converted to normalized units through `fx`.
#[derive(Debug, Clone, Copy)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(
            cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64,
            "principal point must be inside the image"
        );
        Self { fx, fy, cx, cy, width, height }
    }

    /// 1280x720 with a 90 degree horizontal field of view.
    pub fn default_hd() -> Self {
        Self::new(640.0, 640.0, 640.0, 360.0, 1280, 720)
    }

    pub fn pixel_from_normalized(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * uv.x + self.cx, self.fy * uv.y + self.cy)
    }

    pub fn normalized_from_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Pixel-unit standard deviation expressed in normalized units.
    pub fn normalized_sigma(&self, pixel_sigma: f64) -> f64 {
        pixel_sigma / self.fx
    }
}

/// One observation of a feature, in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureObservation {
    pub feature_id: u64,
    pub frame_index: u64,
    pub uv_norm: Vector2<f64>,
}

/// All observations of one feature, anchored at the first observing frame.
/// A track only enters the estimation problem with at least two
/// observations.
#[derive(Debug, Clone)]
pub struct FeatureTrack {
    pub feature_id: u64,
    pub anchor_frame: u64,
    pub observations: Vec<FeatureObservation>,
}

impl FeatureTrack {
    pub fn new(first: FeatureObservation) -> Self {
        Self {
            feature_id: first.feature_id,
            anchor_frame: first.frame_index,
            observations: vec![first],
        }
    }

    /// Appends an observation; frames must arrive in increasing order.
    pub fn push(&mut self, obs: FeatureObservation) {
        debug_assert_eq!(obs.feature_id, self.feature_id);
        debug_assert!(
            self.observations.last().map(|o| o.frame_index < obs.frame_index).unwrap_or(true)
        );
        self.observations.push(obs);
    }

    pub fn anchor_observation(&self) -> &FeatureObservation {
        &self.observations[0]
    }

    /// Tracks seen only once produce no residuals.
    pub fn has_min_observations(&self) -> bool {
        self.observations.len() >= 2
    }
}

/// Inverse depth along the anchor observation ray, clamped to
/// [`LAMBDA_MIN`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDepth {
    lambda: f64,
}

impl InverseDepth {
    pub fn new(lambda: f64) -> Self {
        Self { lambda: lambda.max(LAMBDA_MIN) }
    }

    pub fn from_depth(depth: f64) -> Self {
        Self::new(1.0 / depth)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn depth(&self) -> f64 {
        1.0 / self.lambda
    }
}

/// Projects a world point through a body pose and the camera-to-body
/// extrinsic into normalized image coordinates.
pub fn project(
    world_point: &Vector3<f64>,
    body_pose: &Pose,
    extrinsic: &Pose,
) -> Result<Vector2<f64>, VisionError> {
    let p_body = body_pose.inverse().transform_point(world_point);
    let p_cam = extrinsic.inverse().transform_point(&p_body);
    perspective_divide(&p_cam)
}

fn perspective_divide(p_cam: &Vector3<f64>) -> Result<Vector2<f64>, VisionError> {
    if p_cam.z <= MIN_CAMERA_Z {
        return Err(VisionError::BehindCamera { z: p_cam.z });
    }
    Ok(Vector2::new(p_cam.x / p_cam.z, p_cam.y / p_cam.z))
}

/// Camera-frame point of an observation ray at the given inverse depth.
pub fn back_project(uv_norm: &Vector2<f64>, inv_depth: f64) -> Vector3<f64> {
    Vector3::new(uv_norm.x, uv_norm.y, 1.0) / inv_depth
}

/// Reprojection residual: the anchor ray at depth `1/lambda` is carried
/// through `pose_i -> world -> pose_j -> camera` and compared against the
/// observation in frame `j`.
pub fn reprojection_residual(
    anchor_uv: &Vector2<f64>,
    target_uv: &Vector2<f64>,
    lambda: f64,
    pose_i: &Pose,
    pose_j: &Pose,
    extrinsic: &Pose,
) -> Result<Vector2<f64>, VisionError> {
    let p_ci = back_project(anchor_uv, lambda);
    let p_w = pose_i.transform_point(&extrinsic.transform_point(&p_ci));
    let p_bj = pose_j.inverse().transform_point(&p_w);
    let p_cj = extrinsic.inverse().transform_point(&p_bj);
    Ok(perspective_divide(&p_cj)? - target_uv)
}

/// Jacobians of the reprojection residual w.r.t. the 6-dim local
/// perturbations `(dp, dtheta)` of both body poses and the extrinsic, and
/// w.r.t. the inverse depth.
#[derive(Debug, Clone)]
pub struct ReprojectionJacobians {
    pub d_pose_i: Matrix2x6,
    pub d_pose_j: Matrix2x6,
    pub d_extrinsic: Matrix2x6,
    pub d_lambda: Vector2<f64>,
}

pub fn reprojection_residual_with_jacobians(
    anchor_uv: &Vector2<f64>,
    target_uv: &Vector2<f64>,
    lambda: f64,
    pose_i: &Pose,
    pose_j: &Pose,
    extrinsic: &Pose,
) -> Result<(Vector2<f64>, ReprojectionJacobians), VisionError> {
    let r_i = pose_i.rotation.rotation_matrix();
    let r_j_t = pose_j.rotation.rotation_matrix().transpose();
    let r_bc = extrinsic.rotation.rotation_matrix();
    let r_bc_t = r_bc.transpose();

    let p_ci = back_project(anchor_uv, lambda);
    let p_bi = r_bc * p_ci + extrinsic.translation;
    let p_w = r_i * p_bi + pose_i.translation;
    let p_bj = r_j_t * (p_w - pose_j.translation);
    let p_cj = r_bc_t * (p_bj - extrinsic.translation);

    if p_cj.z <= MIN_CAMERA_Z {
        return Err(VisionError::BehindCamera { z: p_cj.z });
    }
    let residual = Vector2::new(p_cj.x / p_cj.z, p_cj.y / p_cj.z) - target_uv;

    let inv_z = 1.0 / p_cj.z;
    let proj = Matrix2x3::new(
        inv_z,
        0.0,
        -p_cj.x * inv_z * inv_z,
        0.0,
        inv_z,
        -p_cj.y * inv_z * inv_z,
    );

    let cam_from_world = r_bc_t * r_j_t;
    let cam_j_from_cam_i = cam_from_world * r_i * r_bc;

    let mut d_pose_i = Matrix2x6::zeros();
    d_pose_i.fixed_view_mut::<2, 3>(0, 0).copy_from(&(proj * cam_from_world));
    d_pose_i
        .fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(proj * (-(cam_from_world * r_i) * skew(&p_bi))));

    let mut d_pose_j = Matrix2x6::zeros();
    d_pose_j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-(proj * cam_from_world)));
    d_pose_j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(proj * r_bc_t * skew(&p_bj)));

    let mut d_extrinsic = Matrix2x6::zeros();
    d_extrinsic
        .fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(proj * (r_bc_t * (r_j_t * r_i - Matrix3::identity()))));
    d_extrinsic
        .fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(proj * (skew(&p_cj) - cam_j_from_cam_i * skew(&p_ci))));

    let d_lambda = proj * (cam_j_from_cam_i * (-p_ci / lambda));

    Ok((
        residual,
        ReprojectionJacobians { d_pose_i, d_pose_j, d_extrinsic, d_lambda },
    ))
}

/// Linear two-view (midpoint) triangulation between the track's anchor and
/// its widest-baseline observation; `pose_of` resolves body poses by frame.
pub fn triangulate_initial_depth(
    track: &FeatureTrack,
    pose_of: impl Fn(u64) -> Option<Pose>,
    extrinsic: &Pose,
) -> Result<InverseDepth, VisionError> {
    let anchor = track.anchor_observation();
    let anchor_pose = pose_of(anchor.frame_index)
        .ok_or(VisionError::InsufficientParallax { baseline: 0.0, depth: f64::NAN })?;
    let cam_i = anchor_pose.compose(extrinsic);

    // Widest baseline partner.
    let mut best: Option<(f64, Pose, Vector2<f64>)> = None;
    for obs in track.observations.iter().skip(1) {
        let Some(pose) = pose_of(obs.frame_index) else { continue };
        let cam_j = pose.compose(extrinsic);
        let baseline = (cam_j.translation - cam_i.translation).norm();
        if best.as_ref().map(|(b, _, _)| baseline > *b).unwrap_or(true) {
            best = Some((baseline, pose, obs.uv_norm));
        }
    }
    let Some((baseline, pose_j, target_uv)) = best else {
        return Err(VisionError::InsufficientParallax { baseline: 0.0, depth: f64::NAN });
    };
    if baseline < 1e-2 {
        return Err(VisionError::InsufficientParallax { baseline, depth: f64::NAN });
    }

    // Midpoint method between the two rays in the target camera frame.
    let cam_j = pose_j.compose(extrinsic);
    let rel = cam_j.inverse().compose(&cam_i);
    let ray_i = rel.rotation.rotate(&Vector3::new(anchor.uv_norm.x, anchor.uv_norm.y, 1.0));
    let ray_j = Vector3::new(target_uv.x, target_uv.y, 1.0);
    let t = rel.translation;

    let a11 = ray_i.norm_squared();
    let a12 = -ray_i.dot(&ray_j);
    let a22 = ray_j.norm_squared();
    let b1 = -ray_i.dot(&t);
    let b2 = ray_j.dot(&t);
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 * a11 * a22 {
        return Err(VisionError::InsufficientParallax { baseline, depth: f64::NAN });
    }
    let depth_i = (b1 * a22 - a12 * b2) / det;
    if depth_i <= 0.0 {
        return Err(VisionError::InsufficientParallax { baseline, depth: depth_i });
    }
    if baseline / depth_i < 1e-3 {
        return Err(VisionError::InsufficientParallax { baseline, depth: depth_i });
    }
    Ok(InverseDepth::new(1.0 / depth_i))
}
