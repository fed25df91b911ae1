//! Product-of-exponentials forward kinematics for the manipulator and the
//! propagation of poses between the base camera body and the EE camera body
//! through the arm chain.
//!
//! Frames, in order of the chain: base camera body `b_B` -> arm base `s` ->
//! tool `t` -> EE camera body `b_E`. The two mounting transforms and the
//! zero-configuration tool pose are fixed properties of an [`ArmModel`].

use crate::geometry::{se3_exp, Pose, Twist, UnitQuaternion};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("joint vector has {got} entries, model has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("failed to read arm model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse arm model: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid arm model: {0}")]
    Invalid(String),
}

/// Joint angles wrapped to `[0, 2*pi)` at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngles {
    theta: Vec<f64>,
}

impl JointAngles {
    pub fn new(theta: &[f64]) -> Self {
        Self { theta: theta.iter().map(|t| t.rem_euclid(TAU)).collect() }
    }

    pub fn zeros(n: usize) -> Self {
        Self { theta: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }
}

/// Kinematic description of the manipulator: one twist per joint expressed in
/// the arm base frame at zero configuration, the zero-configuration tool
/// pose, and the two fixed mounting transforms.
#[derive(Debug, Clone)]
pub struct ArmModel {
    twists: Vec<Twist>,
    /// Tool pose in the arm base frame at zero configuration, `g_st(0)`.
    pub zero_config_tool: Pose,
    /// Base camera body -> arm base mounting transform.
    pub base_body_to_arm: Pose,
    /// Tool -> EE camera body mounting transform.
    pub tool_to_ee_body: Pose,
}

impl ArmModel {
    pub fn new(
        twists: Vec<Twist>,
        zero_config_tool: Pose,
        base_body_to_arm: Pose,
        tool_to_ee_body: Pose,
    ) -> Result<Self, KinematicsError> {
        if twists.is_empty() {
            return Err(KinematicsError::Invalid("arm model needs at least one joint".into()));
        }
        for (i, twist) in twists.iter().enumerate() {
            let n = twist.omega.norm();
            if n > 1e-9 && (n - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::Invalid(format!(
                    "joint {i} twist omega norm {n} is neither 0 nor 1"
                )));
            }
        }
        Ok(Self { twists, zero_config_tool, base_body_to_arm, tool_to_ee_body })
    }

    pub fn joint_count(&self) -> usize {
        self.twists.len()
    }

    pub fn twists(&self) -> &[Twist] {
        &self.twists
    }

    /// The 7-DOF reference model shipped with the crate.
    pub fn reference() -> Self {
        ArmModelSpec::parse(REFERENCE_MODEL_TOML)
            .expect("embedded reference arm model must parse")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        ArmModelSpec::parse(text)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, KinematicsError> {
        ArmModelSpec::parse(&std::fs::read_to_string(path)?)
    }

    fn check_dims(&self, theta: &JointAngles) -> Result<(), KinematicsError> {
        if theta.len() != self.joint_count() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.joint_count(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// Tool pose in the arm base frame:
/// `exp(xi_1 theta_1) ... exp(xi_N theta_N) g_st(0)`.
pub fn forward_kinematics(model: &ArmModel, theta: &JointAngles) -> Result<Pose, KinematicsError> {
    model.check_dims(theta)?;
    let mut pose = Pose::identity();
    for (twist, &angle) in model.twists.iter().zip(theta.as_slice()) {
        pose = pose.compose(&se3_exp(twist, angle));
    }
    Ok(pose.compose(&model.zero_config_tool))
}

/// EE camera body pose in the world, given the base camera body pose.
pub fn ee_pose_from_base(
    model: &ArmModel,
    chi_base: &Pose,
    theta: &JointAngles,
) -> Result<Pose, KinematicsError> {
    let fk = forward_kinematics(model, theta)?;
    Ok(chi_base.compose(&model.base_body_to_arm).compose(&fk).compose(&model.tool_to_ee_body))
}

/// Base camera body pose in the world, given the EE camera body pose.
pub fn base_pose_from_ee(
    model: &ArmModel,
    chi_ee: &Pose,
    theta: &JointAngles,
) -> Result<Pose, KinematicsError> {
    let fk = forward_kinematics(model, theta)?;
    Ok(chi_ee
        .compose(&model.tool_to_ee_body.inverse())
        .compose(&fk.inverse())
        .compose(&model.base_body_to_arm.inverse()))
}

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PoseSpec {
    /// Quaternion as `[w, x, y, z]`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl PoseSpec {
    fn to_pose(&self) -> Pose {
        let [w, x, y, z] = self.rotation;
        Pose::new(UnitQuaternion::new(w, x, y, z), Vector3::from(self.translation))
    }

    fn from_pose(pose: &Pose) -> Self {
        let q = pose.rotation;
        Self {
            rotation: [q.w(), q.x(), q.y(), q.z()],
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }
}

/// A joint is either a revolute `(axis, point)` pair, from which the twist is
/// `(-axis x point, axis)`, or a raw twist `(v, omega)`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum JointSpec {
    Revolute { axis: [f64; 3], point: [f64; 3] },
    Raw { v: [f64; 3], omega: [f64; 3] },
}

impl JointSpec {
    fn to_twist(&self) -> Twist {
        match self {
            JointSpec::Revolute { axis, point } => {
                Twist::revolute(&Vector3::from(*axis), &Vector3::from(*point))
            }
            JointSpec::Raw { v, omega } => Twist::new(Vector3::from(*v), Vector3::from(*omega)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArmModelSpec {
    joint_count: usize,
    joints: Vec<JointSpec>,
    zero_config_tool: PoseSpec,
    base_camera_to_arm_base: PoseSpec,
    tool_to_ee_camera: PoseSpec,
}

impl ArmModelSpec {
    fn parse(text: &str) -> Result<ArmModel, KinematicsError> {
        let spec: ArmModelSpec = toml::from_str(text)?;
        if spec.joints.len() != spec.joint_count {
            return Err(KinematicsError::Invalid(format!(
                "joint_count = {} but {} joints listed",
                spec.joint_count,
                spec.joints.len()
            )));
        }
        ArmModel::new(
            spec.joints.iter().map(JointSpec::to_twist).collect(),
            spec.zero_config_tool.to_pose(),
            spec.base_camera_to_arm_base.to_pose(),
            spec.tool_to_ee_camera.to_pose(),
        )
    }
}

/// Serializes a model back into the config schema.
pub fn model_to_toml(model: &ArmModel) -> String {
    let spec = ArmModelSpec {
        joint_count: model.joint_count(),
        joints: model
            .twists()
            .iter()
            .map(|t| JointSpec::Raw {
                v: [t.v.x, t.v.y, t.v.z],
                omega: [t.omega.x, t.omega.y, t.omega.z],
            })
            .collect(),
        zero_config_tool: PoseSpec::from_pose(&model.zero_config_tool),
        base_camera_to_arm_base: PoseSpec::from_pose(&model.base_body_to_arm),
        tool_to_ee_camera: PoseSpec::from_pose(&model.tool_to_ee_body),
    };
    toml::to_string(&spec).expect("arm model serialization cannot fail")
}

const REFERENCE_MODEL_TOML: &str = include_str!("../../../configs/arm_7dof.toml");

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Matrix4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent FK oracle: chain of 4x4 homogeneous matrices where each
    /// joint exponential is built from the Rodrigues rotation formula on
    /// matrices, never touching the quaternion path.
    fn fk_matrix_oracle(model: &ArmModel, theta: &JointAngles) -> Matrix4<f64> {
        let mut chain = Matrix4::<f64>::identity();
        for (twist, &angle) in model.twists().iter().zip(theta.as_slice()) {
            chain *= twist_exp_matrix(twist, angle);
        }
        chain * model.zero_config_tool.homogeneous()
    }

    fn twist_exp_matrix(twist: &Twist, angle: f64) -> Matrix4<f64> {
        let mut m = Matrix4::<f64>::identity();
        let omega_norm = twist.omega.norm();
        if omega_norm < 1e-12 {
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(twist.v * angle));
            return m;
        }
        let axis = twist.omega / omega_norm;
        let th = angle * omega_norm;
        let k = crate::geometry::skew(&axis);
        let rot = Matrix3::identity() + th.sin() * k + (1.0 - th.cos()) * (k * k);
        let trans = (Matrix3::identity() - rot) * axis.cross(&twist.v)
            + axis * (axis.dot(&twist.v)) * th;
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&trans);
        m
    }

    fn random_theta(rng: &mut ChaCha8Rng, n: usize) -> JointAngles {
        JointAngles::new(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>())
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        Pose::new(
            UnitQuaternion::from_axis_angle(&axis, rng.random_range(0.0..3.0)),
            Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
        )
    }

    #[test]
    fn zero_configuration_returns_tool_pose_exactly() {
        let model = ArmModel::reference();
        let pose = forward_kinematics(&model, &JointAngles::zeros(7)).unwrap();
        assert_eq!(pose, model.zero_config_tool);
    }

    #[test]
    fn single_joint_quarter_turn() {
        let model = ArmModel::new(
            vec![Twist::revolute(&Vector3::z(), &Vector3::zeros())],
            Pose::from_translation(Vector3::x()),
            Pose::identity(),
            Pose::identity(),
        )
        .unwrap();
        let pose =
            forward_kinematics(&model, &JointAngles::new(&[std::f64::consts::FRAC_PI_2])).unwrap();
        assert_relative_eq!(pose.translation, Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(
            pose.rotation.rotate(&Vector3::x()),
            Vector3::y(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fk_matches_homogeneous_matrix_oracle() {
        let model = ArmModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let theta = random_theta(&mut rng, 7);
            let pose = forward_kinematics(&model, &theta).unwrap();
            let oracle = fk_matrix_oracle(&model, &theta);
            let err = (pose.homogeneous() - oracle).abs();
            assert!(err.max() < 1e-10, "oracle mismatch {}", err.max());
        }
    }

    #[test]
    fn base_ee_round_trip() {
        let model = ArmModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let chi = random_pose(&mut rng);
            let theta = random_theta(&mut rng, 7);
            let ee = ee_pose_from_base(&model, &chi, &theta).unwrap();
            let back = base_pose_from_ee(&model, &ee, &theta).unwrap();
            let (rot_err, trans_err) = chi.distance(&back);
            assert!(rot_err < 1e-10 && trans_err < 1e-10);
        }
    }

    #[test]
    fn ee_pose_matches_direct_composition() {
        let model = ArmModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let chi = random_pose(&mut rng);
            let theta = random_theta(&mut rng, 7);
            let ee = ee_pose_from_base(&model, &chi, &theta).unwrap();
            let fk = forward_kinematics(&model, &theta).unwrap();
            let oracle = chi
                .compose(&model.base_body_to_arm)
                .compose(&fk)
                .compose(&model.tool_to_ee_body);
            let (rot_err, trans_err) = ee.distance(&oracle);
            assert!(rot_err < 1e-10 && trans_err < 1e-10);
        }
    }

    #[test]
    fn base_translation_moves_ee_equivariantly() {
        let model = ArmModel::reference();
        let theta = JointAngles::new(&[0.3, -0.5, 0.2, 1.1, -0.4, 0.6, 0.1]);
        let shift = Vector3::new(1.5, -0.7, 0.2);
        let ee_at_origin =
            ee_pose_from_base(&model, &Pose::identity(), &theta).unwrap();
        let ee_shifted =
            ee_pose_from_base(&model, &Pose::from_translation(shift), &theta).unwrap();
        assert_relative_eq!(
            ee_shifted.translation,
            ee_at_origin.translation + shift,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ee_shifted.rotation.as_vector(),
            ee_at_origin.rotation.as_vector(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_everything_round_trips_to_identity() {
        let model = ArmModel::new(
            vec![Twist::revolute(&Vector3::z(), &Vector3::zeros())],
            Pose::identity(),
            Pose::identity(),
            Pose::identity(),
        )
        .unwrap();
        let theta = JointAngles::zeros(1);
        let ee = ee_pose_from_base(&model, &Pose::identity(), &theta).unwrap();
        let (rot_err, trans_err) = ee.distance(&Pose::identity());
        assert!(rot_err == 0.0 && trans_err == 0.0);
        let base = base_pose_from_ee(&model, &Pose::identity(), &theta).unwrap();
        let (rot_err, trans_err) = base.distance(&Pose::identity());
        assert!(rot_err < 1e-15 && trans_err < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = ArmModel::reference();
        let theta = JointAngles::zeros(5);
        match forward_kinematics(&model, &theta) {
            Err(KinematicsError::DimensionMismatch { expected: 7, got: 5 }) => {}
            other => panic!("expected DimensionMismatch, got {:?}", other),
        }
    }

    #[test]
    fn joint_angles_wrap_into_primary_range() {
        let theta = JointAngles::new(&[-0.1, TAU + 0.2, -TAU, 7.0]);
        for &t in theta.as_slice() {
            assert!((0.0..TAU).contains(&t), "angle {t} outside [0, 2pi)");
        }
        assert_relative_eq!(theta.as_slice()[0], TAU - 0.1, epsilon = 1e-12);
        assert_relative_eq!(theta.as_slice()[1], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn fk_continuity_bounded_by_moment_arms() {
        // The finite-difference sensitivity of the tool position to any one
        // joint is bounded by that joint's moment arm (|v| + |omega| * reach).
        let model = ArmModel::reference();
        let theta0 = JointAngles::new(&[0.4, 0.8, -0.3, 1.2, 0.5, -0.9, 0.2]);
        let reach = model.zero_config_tool.translation.norm()
            + model.twists().iter().map(|t| t.v.norm()).sum::<f64>();
        let step = 1e-6;
        let base_pose = forward_kinematics(&model, &theta0).unwrap();
        for j in 0..7 {
            let mut perturbed = theta0.as_slice().to_vec();
            perturbed[j] += step;
            let pose = forward_kinematics(&model, &JointAngles::new(&perturbed)).unwrap();
            let sensitivity = (pose.translation - base_pose.translation).norm() / step;
            let bound = model.twists()[j].v.norm() + model.twists()[j].omega.norm() * reach;
            assert!(
                sensitivity <= bound + 1e-6,
                "joint {j}: sensitivity {sensitivity} exceeds bound {bound}"
            );
        }
    }

    #[test]
    fn config_serialization_round_trip() {
        let model = ArmModel::reference();
        let text = model_to_toml(&model);
        let parsed = ArmModel::from_toml_str(&text).unwrap();
        assert_eq!(parsed.joint_count(), model.joint_count());
        for (a, b) in parsed.twists().iter().zip(model.twists()) {
            assert_relative_eq!(a.v, b.v, epsilon = 1e-14);
            assert_relative_eq!(a.omega, b.omega, epsilon = 1e-14);
        }
        let (rot_err, trans_err) = parsed.zero_config_tool.distance(&model.zero_config_tool);
        assert!(rot_err < 1e-14 && trans_err < 1e-14);
    }
}
