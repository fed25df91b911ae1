//! IMU preintegration between consecutive camera frames.
//!
//! High-rate accelerometer/gyroscope samples are compressed into one relative
//! motion constraint `(delta_p, delta_v, delta_q)` expressed in the body frame
//! of the first sample, together with a first-order covariance and the bias
//! jacobians needed to re-linearize without re-integrating. Midpoint
//! integration, 15-dim error state ordered `(dp, dtheta, dv, dba, dbg)`.
//!
//! Gravity is not removed during integration; it enters the residual through
//! the caller-supplied world gravity vector.

use crate::estimator::FrameState;
use crate::geometry::{quat_mul, skew, so3_right_jacobian, UnitQuaternion};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

pub type ErrorState = SVector<f64, 15>;
pub type ErrorCov = SMatrix<f64, 15, 15>;

/// Offsets of the error-state blocks.
pub const IDX_P: usize = 0;
pub const IDX_THETA: usize = 3;
pub const IDX_V: usize = 6;
pub const IDX_BA: usize = 9;
pub const IDX_BG: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("preintegration needs at least 2 samples, got {got}")]
    EmptyBatch { got: usize },
    #[error("IMU timestamps must be strictly increasing (sample {index})")]
    NonMonotoneTime { index: usize },
}

/// One inertial sample in the body frame; accelerometer includes the gravity
/// reaction (specific force).
#[derive(Debug, Clone, Copy)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Continuous-time noise densities; all strictly positive.
#[derive(Debug, Clone, Copy)]
pub struct ImuNoise {
    pub accel_noise_density: f64,
    pub gyro_noise_density: f64,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
}

impl ImuNoise {
    pub fn new(
        accel_noise_density: f64,
        gyro_noise_density: f64,
        accel_bias_walk: f64,
        gyro_bias_walk: f64,
    ) -> Self {
        assert!(
            accel_noise_density > 0.0
                && gyro_noise_density > 0.0
                && accel_bias_walk > 0.0
                && gyro_bias_walk > 0.0,
            "noise densities must be strictly positive"
        );
        Self { accel_noise_density, gyro_noise_density, accel_bias_walk, gyro_bias_walk }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.accel_noise_density * factor,
            self.gyro_noise_density * factor,
            self.accel_bias_walk * factor,
            self.gyro_bias_walk * factor,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }

    pub fn norm(&self) -> f64 {
        (self.accel.norm_squared() + self.gyro.norm_squared()).sqrt()
    }
}

/// Preintegrated relative motion between two frames, with covariance and
/// bias jacobians, in the body frame of the first sample.
#[derive(Debug, Clone)]
pub struct PreintegratedDelta {
    pub dt_total: f64,
    pub delta_p: Vector3<f64>,
    pub delta_v: Vector3<f64>,
    pub delta_q: UnitQuaternion,
    /// 15x15 covariance over `(dp, dtheta, dv, dba, dbg)`.
    pub covariance: ErrorCov,
    pub dp_dba: Matrix3<f64>,
    pub dp_dbg: Matrix3<f64>,
    pub dv_dba: Matrix3<f64>,
    pub dv_dbg: Matrix3<f64>,
    pub dq_dbg: Matrix3<f64>,
    /// Bias the batch was integrated at.
    pub linearization_bias: ImuBias,
}

/// Threshold above which a first-order bias correction is considered
/// untrustworthy; callers should re-integrate instead.
pub const BIAS_CORRECTION_LIMIT: f64 = 0.1;

/// Midpoint-rule preintegration of a sample batch at the given bias.
pub fn integrate(
    samples: &[ImuSample],
    bias: ImuBias,
    noise: &ImuNoise,
) -> Result<PreintegratedDelta, ImuError> {
    if samples.len() < 2 {
        return Err(ImuError::EmptyBatch { got: samples.len() });
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(ImuError::NonMonotoneTime { index: i + 1 });
        }
    }

    let mut delta_p = Vector3::zeros();
    let mut delta_v = Vector3::zeros();
    let mut delta_q = UnitQuaternion::identity();
    let mut cov = ErrorCov::zeros();
    let mut jac = ErrorCov::identity();

    for pair in samples.windows(2) {
        let (s0, s1) = (&pair[0], &pair[1]);
        let dt = s1.t - s0.t;

        let acc0 = s0.accel - bias.accel;
        let acc1 = s1.accel - bias.accel;
        let gyro_mid = 0.5 * (s0.gyro + s1.gyro) - bias.gyro;

        let q0 = delta_q;
        let q1 = quat_mul(&q0, &UnitQuaternion::exp_map(&(gyro_mid * dt)));
        let r0 = q0.rotation_matrix();
        let r1 = q1.rotation_matrix();

        let acc_mid = 0.5 * (r0 * acc0 + r1 * acc1);
        delta_p += delta_v * dt + 0.5 * acc_mid * dt * dt;
        delta_v += acc_mid * dt;
        delta_q = q1;

        // Discrete error-state transition (midpoint rule). The rotation rows
        // use the exact incremental-rotation transpose and SO(3) right
        // jacobian so the accumulated bias jacobians track the discrete
        // recursion closely over long batches.
        let a0x = skew(&acc0);
        let a1x = skew(&acc1);
        let i3 = Matrix3::identity();

        let phi = gyro_mid * dt;
        let dtheta_prop = UnitQuaternion::exp_map(&phi).rotation_matrix().transpose();
        let dtheta_dbg = -so3_right_jacobian(&phi) * dt;
        let dp_dtheta = -0.25 * (r0 * a0x + r1 * a1x * dtheta_prop) * dt * dt;
        let dv_dtheta = -0.5 * (r0 * a0x + r1 * a1x * dtheta_prop) * dt;

        let mut f = ErrorCov::identity();
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_THETA).copy_from(&dp_dtheta);
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_V).copy_from(&(i3 * dt));
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_BA).copy_from(&(-0.25 * (r0 + r1) * dt * dt));
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_BG)
            .copy_from(&(-0.25 * r1 * a1x * dt * dt * dtheta_dbg));
        f.fixed_view_mut::<3, 3>(IDX_THETA, IDX_THETA).copy_from(&dtheta_prop);
        f.fixed_view_mut::<3, 3>(IDX_THETA, IDX_BG).copy_from(&dtheta_dbg);
        f.fixed_view_mut::<3, 3>(IDX_V, IDX_THETA).copy_from(&dv_dtheta);
        f.fixed_view_mut::<3, 3>(IDX_V, IDX_BA).copy_from(&(-0.5 * (r0 + r1) * dt));
        f.fixed_view_mut::<3, 3>(IDX_V, IDX_BG).copy_from(&(-0.5 * r1 * a1x * dt * dtheta_dbg));

        // Noise input order: (na0, ng0, na1, ng1, nba, nbg).
        let mut v = SMatrix::<f64, 15, 18>::zeros();
        v.fixed_view_mut::<3, 3>(IDX_P, 0).copy_from(&(0.25 * r0 * dt * dt));
        v.fixed_view_mut::<3, 3>(IDX_P, 3).copy_from(&(-0.125 * r1 * a1x * dt * dt * dt));
        v.fixed_view_mut::<3, 3>(IDX_P, 6).copy_from(&(0.25 * r1 * dt * dt));
        v.fixed_view_mut::<3, 3>(IDX_P, 9).copy_from(&(-0.125 * r1 * a1x * dt * dt * dt));
        v.fixed_view_mut::<3, 3>(IDX_THETA, 3).copy_from(&(0.5 * i3 * dt));
        v.fixed_view_mut::<3, 3>(IDX_THETA, 9).copy_from(&(0.5 * i3 * dt));
        v.fixed_view_mut::<3, 3>(IDX_V, 0).copy_from(&(0.5 * r0 * dt));
        v.fixed_view_mut::<3, 3>(IDX_V, 3).copy_from(&(-0.25 * r1 * a1x * dt * dt));
        v.fixed_view_mut::<3, 3>(IDX_V, 6).copy_from(&(0.5 * r1 * dt));
        v.fixed_view_mut::<3, 3>(IDX_V, 9).copy_from(&(-0.25 * r1 * a1x * dt * dt));
        v.fixed_view_mut::<3, 3>(IDX_BA, 12).copy_from(&(i3 * dt));
        v.fixed_view_mut::<3, 3>(IDX_BG, 15).copy_from(&(i3 * dt));

        // Continuous densities to per-interval variances.
        let mut q_diag = SVector::<f64, 18>::zeros();
        let na = noise.accel_noise_density.powi(2) / dt;
        let ng = noise.gyro_noise_density.powi(2) / dt;
        let nba = noise.accel_bias_walk.powi(2) / dt;
        let nbg = noise.gyro_bias_walk.powi(2) / dt;
        for i in 0..3 {
            q_diag[i] = na;
            q_diag[3 + i] = ng;
            q_diag[6 + i] = na;
            q_diag[9 + i] = ng;
            q_diag[12 + i] = nba;
            q_diag[15 + i] = nbg;
        }

        cov = f * cov * f.transpose() + v * SMatrix::from_diagonal(&q_diag) * v.transpose();
        cov = 0.5 * (cov + cov.transpose());
        jac = f * jac;
    }

    Ok(PreintegratedDelta {
        dt_total: samples.last().unwrap().t - samples[0].t,
        delta_p,
        delta_v,
        delta_q,
        covariance: cov,
        dp_dba: jac.fixed_view::<3, 3>(IDX_P, IDX_BA).into(),
        dp_dbg: jac.fixed_view::<3, 3>(IDX_P, IDX_BG).into(),
        dv_dba: jac.fixed_view::<3, 3>(IDX_V, IDX_BA).into(),
        dv_dbg: jac.fixed_view::<3, 3>(IDX_V, IDX_BG).into(),
        dq_dbg: jac.fixed_view::<3, 3>(IDX_THETA, IDX_BG).into(),
        linearization_bias: bias,
    })
}

/// First-order update of the preintegrated terms to a new bias, using the
/// stored bias jacobians. Accuracy degrades as `O(|db|^2)`; shifts beyond
/// [`BIAS_CORRECTION_LIMIT`] should re-integrate instead.
pub fn correct_for_bias(delta: &PreintegratedDelta, new_bias: ImuBias) -> PreintegratedDelta {
    let dba = new_bias.accel - delta.linearization_bias.accel;
    let dbg = new_bias.gyro - delta.linearization_bias.gyro;
    let mut out = delta.clone();
    out.delta_p = delta.delta_p + delta.dp_dba * dba + delta.dp_dbg * dbg;
    out.delta_v = delta.delta_v + delta.dv_dba * dba + delta.dv_dbg * dbg;
    out.delta_q = quat_mul(&delta.delta_q, &UnitQuaternion::exp_map(&(delta.dq_dbg * dbg)));
    out
}

/// How far a bias is from the batch's linearization point.
pub fn bias_shift(delta: &PreintegratedDelta, new_bias: ImuBias) -> f64 {
    ((new_bias.accel - delta.linearization_bias.accel).norm_squared()
        + (new_bias.gyro - delta.linearization_bias.gyro).norm_squared())
    .sqrt()
}

/// Preintegration residual over `(dp, dtheta, dv, dba, dbg)`.
///
/// Zero when the two states are connected by the noise-free propagated
/// trajectory with constant biases. `gravity` is the world gravity
/// acceleration vector (conventionally `(0, 0, -9.81)`).
pub fn imu_residual(
    delta: &PreintegratedDelta,
    state_i: &FrameState,
    state_j: &FrameState,
    gravity: &Vector3<f64>,
) -> ErrorState {
    let dt = delta.dt_total;
    let corrected = correct_for_bias(delta, state_i.bias);
    let r_i_t = state_i.orientation.rotation_matrix().transpose();

    let p_term =
        state_j.position - state_i.position - state_i.velocity * dt - 0.5 * gravity * dt * dt;
    let v_term = state_j.velocity - state_i.velocity - gravity * dt;

    let q_err = quat_mul(
        &corrected.delta_q.inverse(),
        &quat_mul(&state_i.orientation.inverse(), &state_j.orientation),
    );

    let mut r = ErrorState::zeros();
    r.fixed_rows_mut::<3>(IDX_P).copy_from(&(r_i_t * p_term - corrected.delta_p));
    r.fixed_rows_mut::<3>(IDX_THETA)
        .copy_from(&(2.0 * Vector3::new(q_err.x(), q_err.y(), q_err.z())));
    r.fixed_rows_mut::<3>(IDX_V).copy_from(&(r_i_t * v_term - corrected.delta_v));
    r.fixed_rows_mut::<3>(IDX_BA).copy_from(&(state_j.bias.accel - state_i.bias.accel));
    r.fixed_rows_mut::<3>(IDX_BG).copy_from(&(state_j.bias.gyro - state_i.bias.gyro));
    r
}

/// Analytic jacobians of [`imu_residual`] w.r.t. the 15-dim local
/// perturbations of `state_i` and `state_j`.
pub fn imu_residual_jacobians(
    delta: &PreintegratedDelta,
    state_i: &FrameState,
    state_j: &FrameState,
    gravity: &Vector3<f64>,
) -> (ErrorCov, ErrorCov) {
    let dt = delta.dt_total;
    let corrected = correct_for_bias(delta, state_i.bias);
    let r_i_t = state_i.orientation.rotation_matrix().transpose();

    let p_term =
        state_j.position - state_i.position - state_i.velocity * dt - 0.5 * gravity * dt * dt;
    let v_term = state_j.velocity - state_i.velocity - gravity * dt;

    let qi_inv_qj = quat_mul(&state_i.orientation.inverse(), &state_j.orientation);
    let q_err = quat_mul(&corrected.delta_q.inverse(), &qi_inv_qj);

    let i3 = Matrix3::identity();
    let mut j_i = ErrorCov::zeros();
    let mut j_j = ErrorCov::zeros();

    // Position block.
    j_i.fixed_view_mut::<3, 3>(IDX_P, IDX_P).copy_from(&(-r_i_t));
    j_i.fixed_view_mut::<3, 3>(IDX_P, IDX_THETA).copy_from(&skew(&(r_i_t * p_term)));
    j_i.fixed_view_mut::<3, 3>(IDX_P, IDX_V).copy_from(&(-r_i_t * dt));
    j_i.fixed_view_mut::<3, 3>(IDX_P, IDX_BA).copy_from(&(-delta.dp_dba));
    j_i.fixed_view_mut::<3, 3>(IDX_P, IDX_BG).copy_from(&(-delta.dp_dbg));
    j_j.fixed_view_mut::<3, 3>(IDX_P, IDX_P).copy_from(&r_i_t);

    // Orientation block: r = 2 vec(dq^-1 (x) qi^-1 (x) qj).
    let dtheta_i = -(corrected.delta_q.inverse().left_product_matrix()
        * qi_inv_qj.right_product_matrix())
    .fixed_view::<3, 3>(1, 1)
    .into_owned();
    let dtheta_j = q_err.left_product_matrix().fixed_view::<3, 3>(1, 1).into_owned();
    // Chain rule through the first-order bias correction: the correction
    // rotvec is dq_dbg * db, so its derivative at a nonzero base shift picks
    // up the SO(3) right jacobian.
    let base_shift = delta.dq_dbg * (state_i.bias.gyro - delta.linearization_bias.gyro);
    let dq_dbg_eff = so3_right_jacobian(&base_shift) * delta.dq_dbg;
    let dtheta_dbg =
        -(q_err.right_product_matrix().fixed_view::<3, 3>(1, 1) * dq_dbg_eff).into_owned();
    j_i.fixed_view_mut::<3, 3>(IDX_THETA, IDX_THETA).copy_from(&dtheta_i);
    j_i.fixed_view_mut::<3, 3>(IDX_THETA, IDX_BG).copy_from(&dtheta_dbg);
    j_j.fixed_view_mut::<3, 3>(IDX_THETA, IDX_THETA).copy_from(&dtheta_j);

    // Velocity block.
    j_i.fixed_view_mut::<3, 3>(IDX_V, IDX_THETA).copy_from(&skew(&(r_i_t * v_term)));
    j_i.fixed_view_mut::<3, 3>(IDX_V, IDX_V).copy_from(&(-r_i_t));
    j_i.fixed_view_mut::<3, 3>(IDX_V, IDX_BA).copy_from(&(-delta.dv_dba));
    j_i.fixed_view_mut::<3, 3>(IDX_V, IDX_BG).copy_from(&(-delta.dv_dbg));
    j_j.fixed_view_mut::<3, 3>(IDX_V, IDX_V).copy_from(&r_i_t);

    // Bias random-walk blocks.
    j_i.fixed_view_mut::<3, 3>(IDX_BA, IDX_BA).copy_from(&(-i3));
    j_i.fixed_view_mut::<3, 3>(IDX_BG, IDX_BG).copy_from(&(-i3));
    j_j.fixed_view_mut::<3, 3>(IDX_BA, IDX_BA).copy_from(&i3);
    j_j.fixed_view_mut::<3, 3>(IDX_BG, IDX_BG).copy_from(&i3);

    (j_i, j_j)
}

/// Propagates a frame state through a preintegrated delta (mean only), the
/// initializer for newly added frames and for anchor prediction.
pub fn propagate_state(
    state: &FrameState,
    delta: &PreintegratedDelta,
    gravity: &Vector3<f64>,
) -> FrameState {
    let corrected = correct_for_bias(delta, state.bias);
    let dt = delta.dt_total;
    let r_i = state.orientation.rotation_matrix();
    FrameState {
        frame_index: state.frame_index + 1,
        stamp: state.stamp + dt,
        position: state.position
            + state.velocity * dt
            + 0.5 * gravity * dt * dt
            + r_i * corrected.delta_p,
        velocity: state.velocity + gravity * dt + r_i * corrected.delta_v,
        orientation: quat_mul(&state.orientation, &corrected.delta_q),
        bias: state.bias,
    }
}
