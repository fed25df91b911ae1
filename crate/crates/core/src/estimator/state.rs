//! Per-frame estimator state and the window variable container.

use crate::geometry::{Pose, UnitQuaternion};
use crate::imu::ImuBias;
use nalgebra::Vector3;

/// State of one camera-body frame: position, velocity, orientation, and the
/// two IMU biases, all in the world frame except the biases (body frame).
#[derive(Debug, Clone, Copy)]
pub struct FrameState {
    pub frame_index: u64,
    pub stamp: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: UnitQuaternion,
    pub bias: ImuBias,
}

impl FrameState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.orientation, self.position)
    }
}
