//! Encoder-tick odometry.
//!
//! Tick deltas become wheel angles (`A·ΔT`), wheel speeds (`D_T·ΔT/Δt`) and a
//! body twist; the pose is then advanced along the circular arc that a
//! constant twist traces. The arc update is exact for constant `(v, ω)`, so
//! the result does not depend on how a constant-twist segment is split into
//! steps.

use crate::error::{Error, Result};
use crate::geom::normalize_angle;
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, Pose2D, RobotParams, Twist, WheelSpeeds,
};

/// Heading change per step below which the pose update takes the straight
/// branch; also the wheel-speed difference below which the arc radius is
/// treated as infinite.
pub const STRAIGHT_EPSILON: f64 = 1e-6;

/// Cumulative wheel encoder counts at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderState {
    pub left_ticks: i64,
    pub right_ticks: i64,
    pub timestamp_s: f64,
}

impl EncoderState {
    pub fn new(left_ticks: i64, right_ticks: i64, timestamp_s: f64) -> Self {
        Self {
            left_ticks,
            right_ticks,
            timestamp_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdometryEstimate {
    pub pose: Pose2D,
    pub body_twist: Twist,
    /// Scalar uncertainty diagnostic; stays 0 in this model.
    pub covariance_trace: f64,
    pub stamp_s: f64,
}

impl OdometryEstimate {
    pub fn at(pose: Pose2D, stamp_s: f64) -> Self {
        Self {
            pose,
            body_twist: Twist::ZERO,
            covariance_trace: 0.0,
            stamp_s,
        }
    }
}

/// Radius of the circle driven with the given wheel surface speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArcRadius {
    Straight,
    Finite(f64),
}

pub fn ticks_to_angle(delta_ticks: i64, params: &RobotParams) -> f64 {
    params.radians_per_tick() * delta_ticks as f64
}

/// Linear surface speed of each wheel from real-valued tick deltas.
pub fn wheel_velocities_from_deltas(
    delta_left: f64,
    delta_right: f64,
    dt: f64,
    params: &RobotParams,
) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval { dt });
    }
    let per_tick = params.meters_per_tick();
    Ok((per_tick * delta_left / dt, per_tick * delta_right / dt))
}

/// Linear surface speed `(left, right)` of each wheel between two readings.
pub fn wheel_velocities(
    prev: &EncoderState,
    curr: &EncoderState,
    params: &RobotParams,
) -> Result<(f64, f64)> {
    wheel_velocities_from_deltas(
        (curr.left_ticks - prev.left_ticks) as f64,
        (curr.right_ticks - prev.right_ticks) as f64,
        curr.timestamp_s - prev.timestamp_s,
        params,
    )
}

pub fn arc_radius(v_left: f64, v_right: f64, params: &RobotParams) -> ArcRadius {
    let diff = v_right - v_left;
    if diff.abs() < STRAIGHT_EPSILON {
        ArcRadius::Straight
    } else {
        ArcRadius::Finite(params.wheel_base_m / 2.0 * (v_right + v_left) / diff)
    }
}

/// Expected (unquantized) tick deltas `(left, right)` for holding `cmd` over `dt`.
pub fn tick_split(cmd: Twist, dt: f64, params: &RobotParams) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval { dt });
    }
    let wheels = inverse_kinematics(cmd, params)?;
    let a = params.radians_per_tick();
    Ok((wheels.left_radps * dt / a, wheels.right_radps * dt / a))
}

/// Advances `pose` along the arc traced by constant `(v, w)` for `dt`.
///
/// The displacement is the chord `2R·sin(ΔΘ/2)` laid along the mid-step
/// heading `Θ + ΔΘ/2`. Below [`STRAIGHT_EPSILON`] of heading change the
/// chord is replaced by `v·dt` on the same mid-step heading.
pub fn integrate_pose_exact(pose: Pose2D, v: f64, w: f64, dt: f64) -> Pose2D {
    let dtheta = w * dt;
    let mid = pose.theta_rad + dtheta / 2.0;
    let chord = if dtheta.abs() < STRAIGHT_EPSILON {
        v * dt
    } else {
        2.0 * (v / w) * libm::sin(dtheta / 2.0)
    };
    Pose2D::new(
        pose.x_m + chord * libm::cos(mid),
        pose.y_m + chord * libm::sin(mid),
        pose.theta_rad + dtheta,
    )
}

/// The term-for-term variant of the arc update, kept for side-by-side
/// comparison with [`integrate_pose_exact`].
///
/// ```text
/// X += |v|·cos(ΔΘ/2)·2R·sin(ΔΘ/2)
/// Y += |v|·sin(ΔΘ/2)·2R·sin(ΔΘ/2)
/// Θ += (2·D_T / R)·ΔT
/// ```
///
/// with `ΔΘ = ω·dt` and `R = v/ω`. Note that it ignores the current heading
/// and scales the chord by `|v|`; never used by the simulator.
pub fn integrate_pose_literal(
    pose: Pose2D,
    v: f64,
    w: f64,
    dt: f64,
    params: &RobotParams,
    delta_ticks: i64,
) -> Result<Pose2D> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval { dt });
    }
    let dtheta = w * dt;
    if dtheta.abs() < STRAIGHT_EPSILON {
        return Err(Error::UnsupportedBranch("infinite arc radius"));
    }
    let radius = v / w;
    if radius.abs() < STRAIGHT_EPSILON {
        return Err(Error::UnsupportedBranch("zero arc radius"));
    }
    let half = dtheta / 2.0;
    let chord = 2.0 * radius * libm::sin(half);
    Ok(Pose2D::new(
        pose.x_m + v.abs() * libm::cos(half) * chord,
        pose.y_m + v.abs() * libm::sin(half) * chord,
        pose.theta_rad + 2.0 * params.meters_per_tick() / radius * delta_ticks as f64,
    ))
}

/// Which pose update to apply; [`Integrator::Exact`] is the only one the
/// simulator drives with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Integrator {
    #[default]
    Exact,
    Literal,
}

/// Dispatches one pose update. `delta_ticks` only feeds the literal
/// heading term.
pub fn integrate_pose(
    mode: Integrator,
    pose: Pose2D,
    v: f64,
    w: f64,
    dt: f64,
    params: &RobotParams,
    delta_ticks: i64,
) -> Result<Pose2D> {
    match mode {
        Integrator::Exact => {
            if !(dt > 0.0) {
                return Err(Error::InvalidInterval { dt });
            }
            Ok(integrate_pose_exact(pose, v, w, dt))
        }
        Integrator::Literal => integrate_pose_literal(pose, v, w, dt, params, delta_ticks),
    }
}

/// Odometry update from real-valued tick deltas; the shared path behind
/// [`update_odometry`].
pub fn update_odometry_from_deltas(
    est: &OdometryEstimate,
    delta_left: f64,
    delta_right: f64,
    dt: f64,
    params: &RobotParams,
) -> Result<OdometryEstimate> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval { dt });
    }
    let a = params.radians_per_tick();
    let wheels = WheelSpeeds::new(a * delta_left / dt, a * delta_right / dt);
    let twist = forward_kinematics(wheels, params)?;
    let pose = if delta_left == 0.0 && delta_right == 0.0 {
        est.pose
    } else {
        integrate_pose_exact(est.pose, twist.linear_mps, twist.angular_radps, dt)
    };
    Ok(OdometryEstimate {
        pose,
        body_twist: twist,
        covariance_trace: est.covariance_trace,
        stamp_s: est.stamp_s + dt,
    })
}

pub fn update_odometry(
    est: &OdometryEstimate,
    prev: &EncoderState,
    curr: &EncoderState,
    params: &RobotParams,
) -> Result<OdometryEstimate> {
    let dt = curr.timestamp_s - prev.timestamp_s;
    let mut next = update_odometry_from_deltas(
        est,
        (curr.left_ticks - prev.left_ticks) as f64,
        (curr.right_ticks - prev.right_ticks) as f64,
        dt,
        params,
    )?;
    next.stamp_s = curr.timestamp_s;
    Ok(next)
}

/// Pose reached after holding `(v, w)` for `t` from `start`, in closed form.
pub fn closed_form_arc(start: Pose2D, v: f64, w: f64, t: f64) -> Pose2D {
    let theta = start.theta_rad;
    if w == 0.0 {
        return Pose2D::new(
            start.x_m + v * t * libm::cos(theta),
            start.y_m + v * t * libm::sin(theta),
            theta,
        );
    }
    let r = v / w;
    let phi = w * t;
    // Local frame: x = R sin φ, y = R (1 − cos φ); rotate by the start heading.
    let lx = r * libm::sin(phi);
    let ly = r * (1.0 - libm::cos(phi));
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    Pose2D::new(
        start.x_m + c * lx - s * ly,
        start.y_m + s * lx + c * ly,
        normalize_angle(theta + phi),
    )
}
