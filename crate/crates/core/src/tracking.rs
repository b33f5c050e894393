//! Simulated overhead camera: frame calibration from three markers, noisy
//! global pose reports, and charging-station allocation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Vec2};
use crate::kinematics::Pose2D;
use crate::world::{ChargingStation, WorldState};

/// Per-axis position std-dev whose Rayleigh mean `σ·√(π/2)` is 8 mm.
pub const DEFAULT_CAMERA_SIGMA_M: f64 = 0.006383;

/// Affine map from raw camera coordinates to the table frame in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCalibration {
    pub origin_marker: Vec2,
    pub x_axis_marker: Vec2,
    pub y_axis_marker: Vec2,
    /// Row-major raw → global linear part.
    to_global: [[f64; 2]; 2],
    /// Row-major global → raw linear part.
    to_raw: [[f64; 2]; 2],
    identity: bool,
}

fn apply(m: &[[f64; 2]; 2], v: Vec2) -> Vec2 {
    Vec2::new(m[0][0] * v.x + m[0][1] * v.y, m[1][0] * v.x + m[1][1] * v.y)
}

impl FrameCalibration {
    pub fn identity() -> Self {
        calibrate_frame(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), 1.0)
            .expect("unit markers are not degenerate")
    }

    pub fn to_global(&self, raw: Vec2) -> Vec2 {
        apply(&self.to_global, raw - self.origin_marker)
    }

    pub fn to_raw(&self, global: Vec2) -> Vec2 {
        apply(&self.to_raw, global) + self.origin_marker
    }

    /// Heading of a raw-frame direction angle, expressed in the table frame.
    pub fn heading_to_global(&self, raw_theta: f64) -> f64 {
        apply(&self.to_global, Vec2::from_angle(raw_theta)).angle()
    }

    pub fn heading_to_raw(&self, theta: f64) -> f64 {
        apply(&self.to_raw, Vec2::from_angle(theta)).angle()
    }

    pub fn pose_to_global(&self, raw: &Pose2D) -> Pose2D {
        if self.identity {
            return *raw;
        }
        let p = self.to_global(raw.position());
        Pose2D::new(p.x, p.y, self.heading_to_global(raw.theta_rad))
    }

    pub fn pose_to_raw(&self, global: &Pose2D) -> Pose2D {
        if self.identity {
            return *global;
        }
        let p = self.to_raw(global.position());
        Pose2D::new(p.x, p.y, self.heading_to_raw(global.theta_rad))
    }
}

/// Builds the raw → table transform from three axis markers.
///
/// `origin` maps to (0, 0), `x_point` to `(marker_spacing_m, 0)` and
/// `y_point` to `(0, marker_spacing_m)`; the scale therefore follows the
/// marker spacing, so a field laid out at twice the size reads in halves.
pub fn calibrate_frame(
    origin: Vec2,
    x_point: Vec2,
    y_point: Vec2,
    marker_spacing_m: f64,
) -> Result<FrameCalibration> {
    if !(marker_spacing_m.is_finite() && marker_spacing_m > 0.0) {
        return Err(Error::InvalidParams {
            field: "marker_spacing_m",
            reason: "must be finite and > 0",
        });
    }
    let u = x_point - origin;
    let w = y_point - origin;
    let scale = u.norm() * w.norm();
    let det = u.x * w.y - w.x * u.y;
    if !(scale > 0.0) || det.abs() <= 1e-9 * scale {
        return Err(Error::DegenerateFrame);
    }
    // Columns of the raw-frame basis, scaled so one marker spacing is one unit.
    let k = 1.0 / marker_spacing_m;
    let to_raw = [[u.x * k, w.x * k], [u.y * k, w.y * k]];
    let d = det * k * k;
    let to_global = [
        [to_raw[1][1] / d, -to_raw[0][1] / d],
        [-to_raw[1][0] / d, to_raw[0][0] / d],
    ];
    let identity = origin == Vec2::ZERO && to_global == [[1.0, 0.0], [0.0, 1.0]];
    Ok(FrameCalibration {
        origin_marker: origin,
        x_axis_marker: x_point,
        y_axis_marker: y_point,
        to_global,
        to_raw,
        identity,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalPoseReport {
    pub robot_id: String,
    pub pose: Pose2D,
    pub stamp_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CameraNoiseParams {
    /// Per-axis std-dev of the position error.
    pub position_sigma_m: f64,
    pub heading_sigma_rad: f64,
    /// Probability that a robot's tag is missed in a frame.
    pub drop_probability: f64,
}

impl Default for CameraNoiseParams {
    fn default() -> Self {
        Self {
            position_sigma_m: DEFAULT_CAMERA_SIGMA_M,
            heading_sigma_rad: 0.01,
            drop_probability: 0.0,
        }
    }
}

impl CameraNoiseParams {
    pub fn noiseless() -> Self {
        Self {
            position_sigma_m: 0.0,
            heading_sigma_rad: 0.0,
            drop_probability: 0.0,
        }
    }
}

/// One camera frame: every robot's pose as the tracking server reports it.
///
/// True poses are projected into raw camera coordinates, mapped back through
/// the calibration, and perturbed with zero-mean Gaussian noise.
pub fn observe_poses<R: Rng + ?Sized>(
    world: &WorldState,
    cal: &FrameCalibration,
    noise: &CameraNoiseParams,
    rng: &mut R,
) -> Vec<GlobalPoseReport> {
    let pos_noise = (noise.position_sigma_m > 0.0)
        .then(|| Normal::new(0.0, noise.position_sigma_m).expect("finite sigma"));
    let head_noise = (noise.heading_sigma_rad > 0.0)
        .then(|| Normal::new(0.0, noise.heading_sigma_rad).expect("finite sigma"));
    let mut reports = Vec::with_capacity(world.robots.len());
    for robot in &world.robots {
        if noise.drop_probability > 0.0 && rng.random::<f64>() < noise.drop_probability {
            continue;
        }
        let seen = cal.pose_to_global(&cal.pose_to_raw(&robot.pose));
        let (mut x, mut y, mut theta) = (seen.x_m, seen.y_m, seen.theta_rad);
        if let Some(d) = &pos_noise {
            x += d.sample(rng);
            y += d.sample(rng);
        }
        if let Some(d) = &head_noise {
            theta = normalize_angle(theta + d.sample(rng));
        }
        reports.push(GlobalPoseReport {
            robot_id: robot.id.clone(),
            pose: Pose2D::new(x, y, theta),
            stamp_s: world.sim_time_s,
        });
    }
    reports
}

/// Gives `robot_id` the nearest free station (ties to the lowest station id)
/// and marks it occupied. A robot that already holds a station gets the same
/// one back. Returns `None` when every station is taken.
pub fn assign_charging_station(
    stations: &mut [ChargingStation],
    known_robots: &[String],
    robot_id: &str,
    robot_pose: &Pose2D,
) -> Result<Option<ChargingStation>> {
    if !known_robots.iter().any(|r| r == robot_id) {
        return Err(Error::InvalidRequest(alloc::format!(
            "unknown robot `{robot_id}`"
        )));
    }
    if let Some(held) = stations
        .iter()
        .find(|s| s.occupied_by.as_deref() == Some(robot_id))
    {
        return Ok(Some(held.clone()));
    }
    let here = robot_pose.position();
    let best = stations
        .iter_mut()
        .filter(|s| s.occupied_by.is_none())
        .min_by(|a, b| {
            let (da, db) = (a.position.distance(here), b.position.distance(here));
            da.total_cmp(&db).then_with(|| a.id.cmp(&b.id))
        });
    Ok(best.map(|s| {
        s.occupied_by = Some(String::from(robot_id));
        s.clone()
    }))
}

/// Frees whatever station `robot_id` holds; returns whether one was held.
pub fn release_charging_station(stations: &mut [ChargingStation], robot_id: &str) -> bool {
    let mut released = false;
    for s in stations
        .iter_mut()
        .filter(|s| s.occupied_by.as_deref() == Some(robot_id))
    {
        s.occupied_by = None;
        released = true;
    }
    released
}
