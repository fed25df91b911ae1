//! Dual sliding-window visual-inertial odometry for a mobile manipulator.
//!
//! Two independent monocular VIO estimators (one on the mobile base, one on
//! the end-effector camera) run in lockstep and anchor each other through the
//! manipulator's kinematic chain. The crate also ships a choreography
//! simulator that generates ground truth, IMU, feature-track, and joint-state
//! streams, and an evaluation module computing absolute trajectory errors.

pub mod coordinator;
pub mod estimator;
pub mod eval;
pub mod geometry;
pub mod imu;
pub mod kinematics;
pub mod sim;
pub mod vision;

pub use geometry::{Pose, TangentVector, Twist, UnitQuaternion};
