//! Differential-drive swarm testbed core.
//!
//! Everything in this crate is pure computation over value types: the
//! kinematic and odometry models of a two-wheeled tabletop robot, a per-wheel
//! PID loop driving a first-order motor plant, the ground-truth world model
//! (encoders, batteries, sound field, table bounds), the simulated overhead
//! tracking camera and the swarm-level consensus controllers.
//!
//! The crate is `no_std` and only needs `alloc`. Transcendental functions go
//! through [`libm`] so trajectories are bit-identical across platforms.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod controllers;
pub mod error;
pub mod geom;
pub mod kinematics;
pub mod motor;
pub mod odometry;
pub mod tracking;
pub mod world;

pub use error::{Error, Result};
pub use geom::{normalize_angle, Vec2};
pub use kinematics::{Pose2D, RobotParams, Twist, WheelSpeeds};
