//! Robot parameters and the differential-drive velocity maps.
//!
//! Body velocity and wheel velocity are related by
//!
//! ```text
//! v = r (φr + φl) / 2        ω = r (φr − φl) / d
//! φr = (v + ω d / 2) / r     φl = (v − ω d / 2) / r
//! ```
//!
//! where `r` is the wheel radius and `d` the distance between wheel centres.

use core::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Vec2};

/// Physical parameters of one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RobotParams {
    pub wheel_radius_m: f64,
    /// Distance between the two wheel centres.
    pub wheel_base_m: f64,
    pub ticks_per_rev: u32,
    pub max_linear_speed_mps: f64,
    pub max_wheel_speed_radps: f64,
    /// Radius of the disc used for overlap checks.
    pub footprint_radius_m: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            wheel_radius_m: 0.016,
            wheel_base_m: 0.06,
            ticks_per_rev: 1440,
            max_linear_speed_mps: 0.28,
            // 0.28 m/s / 0.016 m: the wheels top out exactly at the measured top speed.
            max_wheel_speed_radps: 17.5,
            footprint_radius_m: 0.05,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.wheel_radius_m) {
            return Err(Error::InvalidParams {
                field: "wheel_radius_m",
                reason: "must be finite and > 0",
            });
        }
        if !positive(self.wheel_base_m) {
            return Err(Error::InvalidParams {
                field: "wheel_base_m",
                reason: "must be finite and > 0",
            });
        }
        if self.ticks_per_rev == 0 {
            return Err(Error::InvalidParams {
                field: "ticks_per_rev",
                reason: "must be > 0",
            });
        }
        if !positive(self.max_linear_speed_mps) {
            return Err(Error::InvalidParams {
                field: "max_linear_speed_mps",
                reason: "must be finite and > 0",
            });
        }
        if !positive(self.max_wheel_speed_radps) {
            return Err(Error::InvalidParams {
                field: "max_wheel_speed_radps",
                reason: "must be finite and > 0",
            });
        }
        if !positive(self.footprint_radius_m) {
            return Err(Error::InvalidParams {
                field: "footprint_radius_m",
                reason: "must be finite and > 0",
            });
        }
        // Small relative slack so that r * ω_max computed from a division still passes.
        if self.max_linear_speed_mps
            > self.wheel_radius_m * self.max_wheel_speed_radps * (1.0 + 1e-12)
        {
            return Err(Error::InvalidParams {
                field: "max_linear_speed_mps",
                reason: "must not exceed wheel_radius_m * max_wheel_speed_radps",
            });
        }
        Ok(())
    }

    /// Wheel rotation per encoder tick, `A = 2π / N`.
    pub fn radians_per_tick(&self) -> f64 {
        TAU / f64::from(self.ticks_per_rev)
    }

    /// Wheel travel per encoder tick, `D_T = r·A`.
    pub fn meters_per_tick(&self) -> f64 {
        self.wheel_radius_m * self.radians_per_tick()
    }
}

/// Commanded or measured body velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Twist {
    /// Along body X.
    pub linear_mps: f64,
    /// About body Z.
    pub angular_radps: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist {
        linear_mps: 0.0,
        angular_radps: 0.0,
    };

    pub const fn new(linear_mps: f64, angular_radps: f64) -> Self {
        Self {
            linear_mps,
            angular_radps,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear_mps.is_finite() && self.angular_radps.is_finite()
    }

    pub fn scaled(self, k: f64) -> Self {
        Self::new(self.linear_mps * k, self.angular_radps * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WheelSpeeds {
    pub left_radps: f64,
    pub right_radps: f64,
}

impl WheelSpeeds {
    pub const fn new(left_radps: f64, right_radps: f64) -> Self {
        Self {
            left_radps,
            right_radps,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.left_radps.is_finite() && self.right_radps.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.left_radps.abs().max(self.right_radps.abs())
    }
}

/// Planar pose in the table frame. The heading is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose2D {
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
}

impl Pose2D {
    pub fn new(x_m: f64, y_m: f64, theta_rad: f64) -> Self {
        Self {
            x_m,
            y_m,
            theta_rad: normalize_angle(theta_rad),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x_m, self.y_m)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta_rad)
    }

    pub fn is_finite(&self) -> bool {
        self.x_m.is_finite() && self.y_m.is_finite() && self.theta_rad.is_finite()
    }
}

pub fn forward_kinematics(wheels: WheelSpeeds, params: &RobotParams) -> Result<Twist> {
    if !wheels.is_finite() {
        return Err(Error::InvalidInput("wheel speeds must be finite"));
    }
    let r = params.wheel_radius_m;
    Ok(Twist::new(
        r * (wheels.right_radps + wheels.left_radps) / 2.0,
        r * (wheels.right_radps - wheels.left_radps) / params.wheel_base_m,
    ))
}

pub fn inverse_kinematics(cmd: Twist, params: &RobotParams) -> Result<WheelSpeeds> {
    if !cmd.is_finite() {
        return Err(Error::InvalidInput("twist must be finite"));
    }
    let half_track = cmd.angular_radps * params.wheel_base_m / 2.0;
    let r = params.wheel_radius_m;
    Ok(WheelSpeeds::new(
        (cmd.linear_mps - half_track) / r,
        (cmd.linear_mps + half_track) / r,
    ))
}

/// Uniformly scales `cmd` down so that neither implied wheel speed exceeds
/// the wheel cap and the linear speed stays under the linear cap.
///
/// The ratio `v:ω` (and so the turning radius) is preserved. A non-finite
/// command maps to the zero twist.
pub fn saturate_twist(cmd: Twist, params: &RobotParams) -> Twist {
    let Ok(wheels) = inverse_kinematics(cmd, params) else {
        return Twist::ZERO;
    };
    // Values within one part in 1e12 of a cap count as on it; keeps the map idempotent.
    const SLACK: f64 = 1.0 + 1e-12;
    let mut k = 1.0f64;
    let peak = wheels.max_abs();
    if peak > params.max_wheel_speed_radps * SLACK {
        k = params.max_wheel_speed_radps / peak;
    }
    let linear = cmd.linear_mps.abs() * k;
    if linear > params.max_linear_speed_mps * SLACK {
        k *= params.max_linear_speed_mps / linear;
    }
    if k == 1.0 {
        cmd
    } else {
        cmd.scaled(k)
    }
}
