//! Ground truth for the tabletop testbed.
//!
//! [`WorldState`] owns every robot's true pose, motor states, encoder
//! counters and battery, plus the sound sources and charging stations on the
//! table. [`world_step`] advances all of it by one fixed step; nothing in
//! here draws random numbers, so a step is a pure function of the state.
//! Encoder noise is applied afterwards, on what the robot gets to read.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::kinematics::{forward_kinematics, Pose2D, RobotParams, WheelSpeeds};
use crate::motor::{advance_plant, MotorPlantParams, MotorState};
use crate::odometry::{integrate_pose_exact, EncoderState};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SoundSource {
    pub position: Vec2,
    pub power_w: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SoundModelParams {
    /// Distances are floored here to keep the inverse-square term finite.
    pub min_distance_m: f64,
    /// Exponent `k` of the lobe `max(0, cos α)^k`; 0 is omnidirectional.
    pub lobe_exponent: f64,
}

impl Default for SoundModelParams {
    fn default() -> Self {
        Self {
            min_distance_m: 0.05,
            lobe_exponent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChargingStation {
    pub id: String,
    pub position: Vec2,
    pub occupied_by: Option<String>,
    pub charge_rate_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PowerParams {
    pub idle_w: f64,
    pub moving_w: f64,
    /// 2000 mAh at 3.7 V.
    pub capacity_wh: f64,
    /// Fraction of battery energy that reaches the load; draw is divided by it.
    pub efficiency: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            idle_w: 0.9,
            moving_w: 1.5,
            capacity_wh: 2.0 * 3.7,
            efficiency: 1.0,
        }
    }
}

impl PowerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.idle_w >= 0.0 && self.moving_w >= self.idle_w) {
            return Err(Error::InvalidParams {
                field: "power",
                reason: "need 0 <= idle_w <= moving_w",
            });
        }
        if !(self.capacity_wh > 0.0 && self.capacity_wh.is_finite()) {
            return Err(Error::InvalidParams {
                field: "capacity_wh",
                reason: "must be finite and > 0",
            });
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidParams {
                field: "efficiency",
                reason: "must be in (0, 1]",
            });
        }
        Ok(())
    }

    /// Electrical draw at a given mean |duty| of the two motors.
    pub fn draw_w(&self, duty_fraction: f64) -> f64 {
        self.idle_w + (self.moving_w - self.idle_w) * duty_fraction.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobotTruth {
    pub id: String,
    pub pose: Pose2D,
    pub motor_left: MotorState,
    pub motor_right: MotorState,
    pub encoders: EncoderState,
    /// Real-valued cumulative ticks; `encoders` holds their floor.
    pub tick_accum_left: f64,
    pub tick_accum_right: f64,
    pub battery_wh: f64,
    pub charging: bool,
    /// Power delivered while `charging`.
    pub charge_rate_w: f64,
    /// Energy actually taken from / put into the battery so far.
    pub drawn_wh: f64,
    pub charged_wh: f64,
    /// Steps on which the pose had to be clamped to the table.
    pub boundary_contacts: u64,
}

impl RobotTruth {
    pub fn new(id: impl Into<String>, pose: Pose2D, battery_wh: f64) -> Self {
        Self {
            id: id.into(),
            pose,
            motor_left: MotorState::default(),
            motor_right: MotorState::default(),
            encoders: EncoderState::default(),
            tick_accum_left: 0.0,
            tick_accum_right: 0.0,
            battery_wh,
            charging: false,
            charge_rate_w: 0.0,
            drawn_wh: 0.0,
            charged_wh: 0.0,
            boundary_contacts: 0,
        }
    }

    pub fn duty_fraction(&self) -> f64 {
        0.5 * (self.motor_left.duty.abs() + self.motor_right.duty.abs())
    }

    pub fn wheel_speeds(&self) -> WheelSpeeds {
        WheelSpeeds::new(
            self.motor_left.wheel_speed_radps,
            self.motor_right.wheel_speed_radps,
        )
    }
}

/// Physical parameters shared by every robot in a world.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldParams {
    pub robot: RobotParams,
    pub plant: MotorPlantParams,
    pub power: PowerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub sim_time_s: f64,
    pub robots: Vec<RobotTruth>,
    /// (width, height); the table spans `[0, w] × [0, h]`.
    pub table_size_m: (f64, f64),
    pub sound_sources: Vec<SoundSource>,
    pub charging_stations: Vec<ChargingStation>,
    pub rng_seed: u64,
    pub params: WorldParams,
}

impl WorldState {
    pub fn new(table_size_m: (f64, f64), params: WorldParams, rng_seed: u64) -> Self {
        Self {
            sim_time_s: 0.0,
            robots: Vec::new(),
            table_size_m,
            sound_sources: Vec::new(),
            charging_stations: Vec::new(),
            rng_seed,
            params,
        }
    }

    /// Adds a robot with a full battery. Ids must be unique.
    pub fn add_robot(&mut self, id: impl Into<String>, pose: Pose2D) -> Result<usize> {
        let id = id.into();
        if self.robots.iter().any(|r| r.id == id) {
            return Err(Error::InvalidRequest(alloc::format!(
                "duplicate robot id `{id}`"
            )));
        }
        let mut robot = RobotTruth::new(id, pose, self.params.power.capacity_wh);
        robot.encoders.timestamp_s = self.sim_time_s;
        self.robots.push(robot);
        Ok(self.robots.len() - 1)
    }

    pub fn robot(&self, id: &str) -> Option<&RobotTruth> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn robot_mut(&mut self, id: &str) -> Option<&mut RobotTruth> {
        self.robots.iter_mut().find(|r| r.id == id)
    }

    /// Region the robot centre may occupy: the table shrunk by the footprint.
    pub fn center_bounds(&self) -> (Vec2, Vec2) {
        let m = self.params.robot.footprint_radius_m;
        (
            Vec2::new(m, m),
            Vec2::new(self.table_size_m.0 - m, self.table_size_m.1 - m),
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (lo, hi) = self.center_bounds();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        world_step(self, dt)
    }
}

/// Advances every robot by `dt`: motor plants, true pose along the arc of
/// the step-mean wheel speeds, encoder accumulators, battery. Poses are
/// clamped to the table.
pub fn world_step(world: &mut WorldState, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval { dt });
    }
    let params = world.params;
    let rad_per_tick = params.robot.radians_per_tick();
    let (lo, hi) = world.center_bounds();
    let t1 = world.sim_time_s + dt;
    for robot in &mut world.robots {
        if robot.battery_wh <= 0.0 && !robot.charging {
            robot.motor_left.duty = 0.0;
            robot.motor_right.duty = 0.0;
        }
        let left = advance_plant(robot.motor_left, robot.motor_left.duty, dt, &params.plant);
        let right = advance_plant(robot.motor_right, robot.motor_right.duty, dt, &params.plant);
        robot.motor_left = left.state;
        robot.motor_right = right.state;

        let mean = WheelSpeeds::new(left.rotation_rad / dt, right.rotation_rad / dt);
        let twist = forward_kinematics(mean, &params.robot)?;
        let mut pose = integrate_pose_exact(robot.pose, twist.linear_mps, twist.angular_radps, dt);
        let (cx, cy) = (pose.x_m.clamp(lo.x, hi.x), pose.y_m.clamp(lo.y, hi.y));
        if cx != pose.x_m || cy != pose.y_m {
            pose.x_m = cx;
            pose.y_m = cy;
            robot.boundary_contacts += 1;
        }
        robot.pose = pose;

        robot.tick_accum_left += left.rotation_rad / rad_per_tick;
        robot.tick_accum_right += right.rotation_rad / rad_per_tick;
        robot.encoders = EncoderState::new(
            libm::floor(robot.tick_accum_left) as i64,
            libm::floor(robot.tick_accum_right) as i64,
            t1,
        );

        let charge = robot.charging.then_some(robot.charge_rate_w);
        *robot = battery_step(robot, charge, dt, &params.power);
    }
    world.sim_time_s = t1;
    Ok(())
}

/// Intensity picked up by a microphone at `pose` facing along its heading.
///
/// Each active source contributes `P / (4π·max(d, d_min)²) · max(0, cos α)^k`
/// where `α` is the bearing of the source relative to the heading.
pub fn sample_microphone(pose: &Pose2D, sources: &[SoundSource], model: &SoundModelParams) -> f64 {
    let mic = pose.position();
    let heading = pose.heading();
    let mut total = 0.0;
    for src in sources.iter().filter(|s| s.active) {
        let to_src = src.position - mic;
        let d = to_src.norm().max(model.min_distance_m);
        let gain = if model.lobe_exponent == 0.0 {
            1.0
        } else {
            let cos_a = to_src.normalized().map_or(1.0, |u| u.dot(heading));
            libm::pow(cos_a.max(0.0), model.lobe_exponent)
        };
        total += src.power_w / (4.0 * PI * d * d) * gain;
    }
    total
}

/// Battery bookkeeping for one step.
///
/// Without charging the draw interpolates between idle and moving power by
/// the mean |duty| of the two motors; with `charge_w` the battery gains that
/// power instead. The level is clamped to `[0, capacity]` and the energy
/// actually moved is added to `drawn_wh` / `charged_wh`.
pub fn battery_step(
    robot: &RobotTruth,
    charge_w: Option<f64>,
    dt: f64,
    power: &PowerParams,
) -> RobotTruth {
    let mut next = robot.clone();
    let before = robot.battery_wh;
    match charge_w {
        Some(rate) => {
            let after = (before + rate * dt / 3600.0).min(power.capacity_wh);
            next.battery_wh = after;
            next.charged_wh += after - before;
        }
        None => {
            let draw = power.draw_w(robot.duty_fraction()) / power.efficiency;
            let after = (before - draw * dt / 3600.0).max(0.0);
            next.battery_wh = after;
            next.drawn_wh += before - after;
            if after <= 0.0 {
                next.motor_left.duty = 0.0;
                next.motor_right.duty = 0.0;
            }
        }
    }
    next
}

/// Defaults are calibrated so that a 5 m drive accumulates a few
/// centimetres of mean odometry error.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EncoderNoiseParams {
    /// Std-dev of the per-wheel scale error, drawn once per run.
    pub scale_sigma: f64,
    /// Std-dev of the per-reading additive jitter before rounding to ticks.
    pub jitter_sigma_ticks: f64,
}

/// Defaults tuned so the 5 m calibration loop drifts about 6 cm on average
/// over 100 seeds.
impl Default for EncoderNoiseParams {
    fn default() -> Self {
        Self {
            scale_sigma: 0.0018,
            jitter_sigma_ticks: 0.3,
        }
    }
}

impl EncoderNoiseParams {
    pub fn none() -> Self {
        Self {
            scale_sigma: 0.0,
            jitter_sigma_ticks: 0.0,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.scale_sigma == 0.0 && self.jitter_sigma_ticks == 0.0
    }
}

/// Per-robot encoder corruption: a fixed scale error per wheel plus an
/// integer random walk of jitter on the reported cumulative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNoise {
    pub scale: [f64; 2],
    jitter_sigma: f64,
    jitter: [i64; 2],
}

impl EncoderNoise {
    pub fn new<R: Rng + ?Sized>(params: &EncoderNoiseParams, rng: &mut R) -> Self {
        let mut scale = [1.0, 1.0];
        if params.scale_sigma > 0.0 {
            let dist = Normal::new(0.0, params.scale_sigma).expect("finite sigma");
            for s in &mut scale {
                *s = 1.0 + dist.sample(rng);
            }
        }
        Self {
            scale,
            jitter_sigma: params.jitter_sigma_ticks,
            jitter: [0, 0],
        }
    }

    /// Maps a true encoder reading to the reported one.
    pub fn inject<R: Rng + ?Sized>(&mut self, ticks: &EncoderState, rng: &mut R) -> EncoderState {
        if self.jitter_sigma > 0.0 {
            let dist = Normal::new(0.0, self.jitter_sigma).expect("finite sigma");
            for j in &mut self.jitter {
                *j += libm::round(dist.sample(rng)) as i64;
            }
        }
        let report = |true_ticks: i64, scale: f64, jitter: i64| {
            let scaled = if scale == 1.0 {
                true_ticks
            } else {
                libm::floor(scale * true_ticks as f64) as i64
            };
            scaled + jitter
        };
        EncoderState::new(
            report(ticks.left_ticks, self.scale[0], self.jitter[0]),
            report(ticks.right_ticks, self.scale[1], self.jitter[1]),
            ticks.timestamp_s,
        )
    }
}

pub fn inject_encoder_noise<R: Rng + ?Sized>(
    ticks: &EncoderState,
    noise: &mut EncoderNoise,
    rng: &mut R,
) -> EncoderState {
    noise.inject(ticks, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odometry::{closed_form_arc, update_odometry, OdometryEstimate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world_with(poses: &[Pose2D]) -> WorldState {
        let mut w = WorldState::new((2.5, 1.75), WorldParams::default(), 7);
        for (i, p) in poses.iter().enumerate() {
            w.add_robot(alloc::format!("r{i}"), *p).unwrap();
        }
        w
    }

    #[test]
    fn resting_world_only_advances_clock_and_idles() {
        let mut w = world_with(&[Pose2D::new(1.0, 1.0, 0.3)]);
        let before = w.robots[0].clone();
        w.step(0.02).unwrap();
        let r = &w.robots[0];
        assert_eq!(r.pose, before.pose);
        assert_eq!(r.encoders.left_ticks, 0);
        assert!((w.sim_time_s - 0.02).abs() < 1e-15);
        let idle = 0.9 * 0.02 / 3600.0;
        assert!((before.battery_wh - r.battery_wh - idle).abs() < 1e-15);
    }

    #[test]
    fn constant_wheels_follow_straight_closed_form() {
        let start = Pose2D::new(0.5, 0.5, 0.4);
        let mut w = world_with(&[start]);
        // Start the wheels at steady state so the body twist is constant.
        let duty = 0.5;
        let speed = duty * w.params.plant.max_wheel_speed_radps;
        let r = &mut w.robots[0];
        for m in [&mut r.motor_left, &mut r.motor_right] {
            m.wheel_speed_radps = speed;
            m.duty = duty;
        }
        for _ in 0..50 {
            w.step(0.02).unwrap();
        }
        let v = speed * w.params.robot.wheel_radius_m;
        let truth = closed_form_arc(start, v, 0.0, 1.0);
        assert!(w.robots[0].pose.position().distance(truth.position()) < 1e-9);
        assert!((w.robots[0].pose.theta_rad - start.theta_rad).abs() < 1e-12);
    }

    #[test]
    fn edge_robot_is_clamped() {
        let mut w = world_with(&[Pose2D::new(2.44, 1.0, 0.0)]);
        for _ in 0..100 {
            let r = &mut w.robots[0];
            r.motor_left.duty = 1.0;
            r.motor_right.duty = 1.0;
            w.step(0.02).unwrap();
        }
        let r = &w.robots[0];
        assert_eq!(r.pose.x_m, 2.5 - w.params.robot.footprint_radius_m);
        assert!(r.boundary_contacts > 0);
        assert!(w.contains(r.pose.position()));
    }

    #[test]
    fn ticks_track_wheel_rotation() {
        let mut w = world_with(&[Pose2D::new(1.0, 1.0, 0.0)]);
        let mut sum_l = 0i64;
        let mut prev = w.robots[0].encoders;
        for k in 0..300 {
            let r = &mut w.robots[0];
            r.motor_left.duty = if k < 150 { 0.6 } else { -0.3 };
            r.motor_right.duty = 0.2;
            w.step(0.02).unwrap();
            let cur = w.robots[0].encoders;
            sum_l += cur.left_ticks - prev.left_ticks;
            prev = cur;
        }
        let r = &w.robots[0];
        assert_eq!(sum_l, r.encoders.left_ticks);
        assert_eq!(r.encoders.left_ticks, libm::floor(r.tick_accum_left) as i64);
        assert_eq!(
            r.encoders.right_ticks,
            libm::floor(r.tick_accum_right) as i64
        );
    }

    #[test]
    fn unquantized_odometry_matches_truth() {
        let mut w = world_with(&[Pose2D::new(1.2, 0.8, -1.0)]);
        let p = w.params.robot;
        let mut est = OdometryEstimate::at(w.robots[0].pose, 0.0);
        let dt = 0.02;
        for k in 0..400 {
            let (al, ar) = (w.robots[0].tick_accum_left, w.robots[0].tick_accum_right);
            let r = &mut w.robots[0];
            r.motor_left.duty = 0.3 + 0.2 * libm::sin(k as f64 * 0.05);
            r.motor_right.duty = 0.35;
            w.step(dt).unwrap();
            let r = &w.robots[0];
            est = crate::odometry::update_odometry_from_deltas(
                &est,
                r.tick_accum_left - al,
                r.tick_accum_right - ar,
                dt,
                &p,
            )
            .unwrap();
            assert!(
                est.pose.position().distance(r.pose.position()) < 1e-9,
                "step {k}"
            );
        }
    }

    #[test]
    fn microphone_examples() {
        let model = SoundModelParams {
            lobe_exponent: 0.0,
            ..SoundModelParams::default()
        };
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        assert_eq!(sample_microphone(&pose, &[], &model), 0.0);
        let off = SoundSource {
            position: Vec2::new(0.5, 0.0),
            power_w: 1.0,
            active: false,
        };
        assert_eq!(sample_microphone(&pose, &[off], &model), 0.0);

        let near = SoundSource {
            position: Vec2::new(0.4, 0.0),
            power_w: 2.0,
            active: true,
        };
        let far = SoundSource {
            position: Vec2::new(0.8, 0.0),
            ..near.clone()
        };
        let s1 = sample_microphone(&pose, std::slice::from_ref(&near), &model);
        let s2 = sample_microphone(&pose, &[far], &model);
        assert!((s1 / s2 - 4.0).abs() < 1e-12);

        let lobed = SoundModelParams {
            lobe_exponent: 1.0,
            ..model
        };
        let away = Pose2D::new(0.0, 0.0, PI);
        assert_eq!(
            sample_microphone(&away, std::slice::from_ref(&near), &lobed),
            0.0
        );
        // Lobe makes the farther robot that faces the source louder.
        let facing_far = Pose2D::new(-0.4, 0.0, 0.0);
        assert!(
            sample_microphone(&facing_far, std::slice::from_ref(&near), &lobed)
                > sample_microphone(&away, &[near], &lobed)
        );
    }

    #[test]
    fn battery_examples() {
        let power = PowerParams::default();
        assert!((power.capacity_wh - 7.4).abs() < 1e-15);
        let mut r = RobotTruth::new("a", Pose2D::default(), power.capacity_wh);
        r.motor_left.duty = 1.0;
        r.motor_right.duty = -1.0;
        let start = r.battery_wh;
        for _ in 0..3600 {
            r = battery_step(&r, None, 1.0, &power);
        }
        assert!((start - r.battery_wh - 1.5).abs() < 1e-9);
        assert!((r.drawn_wh - 1.5).abs() < 1e-9);

        let hours_idle = power.capacity_wh / power.idle_w;
        assert!((hours_idle - 8.222).abs() < 1e-3);

        let mut empty = RobotTruth::new("b", Pose2D::default(), 0.0);
        empty.motor_left.duty = 0.8;
        let empty = battery_step(&empty, None, 1.0, &power);
        assert_eq!(empty.battery_wh, 0.0);
        assert_eq!(empty.motor_left.duty, 0.0);

        let charged = battery_step(&empty, Some(3.6), 10.0, &power);
        assert!((charged.battery_wh - 0.01).abs() < 1e-15);
        let full = battery_step(
            &RobotTruth::new("c", Pose2D::default(), 7.39),
            Some(100.0),
            3600.0,
            &power,
        );
        assert_eq!(full.battery_wh, power.capacity_wh);
        assert!((full.charged_wh - 0.01).abs() < 1e-12);
    }

    #[test]
    fn energy_is_conserved_through_world_steps() {
        let mut w = world_with(&[Pose2D::new(1.0, 1.0, 0.0)]);
        let start = w.robots[0].battery_wh;
        for k in 0..2000 {
            let r = &mut w.robots[0];
            r.charging = (500..900).contains(&k);
            r.charge_rate_w = 5.0;
            r.motor_left.duty = 0.4;
            r.motor_right.duty = -0.2;
            w.step(0.02).unwrap();
        }
        let r = &w.robots[0];
        assert!(((start - r.battery_wh) - (r.drawn_wh - r.charged_wh)).abs() < 1e-9);
    }

    #[test]
    fn exhausted_battery_stops_motors() {
        let mut w = world_with(&[Pose2D::new(1.0, 1.0, 0.0)]);
        w.robots[0].battery_wh = 0.0;
        w.robots[0].motor_left.duty = 1.0;
        w.robots[0].motor_right.duty = 1.0;
        w.step(0.02).unwrap();
        assert_eq!(w.robots[0].pose, Pose2D::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn noise_disabled_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut noise = EncoderNoise::new(&EncoderNoiseParams::none(), &mut rng);
        for k in 0..100i64 {
            let t = EncoderState::new(k * 7 - 300, -k * 3, k as f64 * 0.02);
            assert_eq!(inject_encoder_noise(&t, &mut noise, &mut rng), t);
        }
    }

    #[test]
    fn scale_mismatch_bends_a_straight_drive() {
        // Closed form: wheel travel L·(1+s) per side gives heading change
        // (s_r − s_l)·L / d after a 1 m drive.
        let p = RobotParams::default();
        let mut noise = EncoderNoise {
            scale: [1.0, 1.01],
            jitter_sigma: 0.0,
            jitter: [0, 0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ticks_per_m = 1.0 / p.meters_per_tick();
        let steps = 500;
        let mut est = OdometryEstimate::default();
        let mut prev = noise.inject(&EncoderState::default(), &mut rng);
        for k in 1..=steps {
            let n = libm::floor(ticks_per_m * k as f64 / steps as f64) as i64;
            let cur = noise.inject(&EncoderState::new(n, n, k as f64 * 0.02), &mut rng);
            est = update_odometry(&est, &prev, &cur, &p).unwrap();
            prev = cur;
        }
        let expected = 0.01 * 1.0 / p.wheel_base_m;
        assert!((est.pose.theta_rad - expected).abs() < 3.0 * p.meters_per_tick() / p.wheel_base_m);
    }

    #[test]
    fn jitter_error_grows_like_sqrt_steps() {
        let p = RobotParams::default();
        let params = EncoderNoiseParams {
            scale_sigma: 0.0,
            jitter_sigma_ticks: 1.0,
        };
        let runs = 100;
        let mean_abs_offset = |steps: usize| -> f64 {
            let mut acc = 0.0;
            for seed in 0..runs {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut noise = EncoderNoise::new(&params, &mut rng);
                let mut last = EncoderState::default();
                for k in 0..steps {
                    last = noise.inject(&EncoderState::new(0, 0, k as f64), &mut rng);
                }
                acc += (last.left_ticks as f64).abs() * p.meters_per_tick();
            }
            acc / runs as f64
        };
        let short = mean_abs_offset(250);
        let long = mean_abs_offset(1000);
        // √(1000/250) = 2.
        let ratio = long / short;
        assert!(ratio > 1.6 && ratio < 2.5, "ratio {ratio}");
    }
}
