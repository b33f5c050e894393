//! Robot-side driver: turns bus commands into motor duties and publishes
//! odometry, battery and microphone readings.

use rand::Rng;

use swarmtable_core::controllers::{position_controller, stop_guard, GoToGoalParams, SwarmConfig};
use swarmtable_core::kinematics::{inverse_kinematics, saturate_twist};
use swarmtable_core::motor::{pid_step, PidGains};
use swarmtable_core::odometry::{
    update_odometry, update_odometry_from_deltas, EncoderState, OdometryEstimate,
};
use swarmtable_core::world::{
    sample_microphone, EncoderNoise, EncoderNoiseParams, RobotTruth, SoundModelParams, WorldState,
};
use swarmtable_core::{Pose2D, RobotParams, Twist, Vec2};

use crate::bus::{channel, Bus, BusError, Payload, Publisher, Subscription, TopicPath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotNodeConfig {
    pub robot: RobotParams,
    pub pid: PidGains,
    pub go_to_goal: GoToGoalParams,
    pub encoder_noise: EncoderNoiseParams,
    pub quantize_ticks: bool,
    pub command_timeout_s: f64,
    pub odom_hz: f64,
    pub battery_hz: f64,
    pub sound_hz: f64,
    pub sound_model: SoundModelParams,
    /// Braking toward other robots while driving to a goal.
    pub guard: SwarmConfig,
}

/// How the robot picks its twist this step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    /// Follow the latest `/cmd_vel`.
    Velocity,
    /// Drive to a global goal using the camera fix when there is one.
    Goal(Vec2),
    /// Replay a fixed twist, ignoring the bus.
    Scripted(Twist),
}

pub struct RobotNode {
    pub id: String,
    cfg: RobotNodeConfig,
    cmd_sub: Subscription,
    goal_sub: Subscription,
    global_sub: Subscription,
    odom_pub: Publisher,
    battery_pub: Publisher,
    sound_pub: Publisher,
    _reserved: Vec<Publisher>,
    noise: EncoderNoise,
    pub estimate: OdometryEstimate,
    last_report: EncoderState,
    last_accum: (f64, f64),
    /// Wheel speeds measured from the last encoder delta.
    measured: (f64, f64),
    command: Twist,
    command_stamp_s: f64,
    drive: Drive,
    camera_fix: Option<Pose2D>,
    others: Vec<Vec2>,
    /// Encoder reading as the robot reports it, for the log.
    pub reported_ticks: (i64, i64),
    pub last_sound: f64,
}

impl std::fmt::Debug for RobotNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobotNode")
            .field("id", &self.id)
            .field("drive", &self.drive)
            .finish()
    }
}

impl RobotNode {
    /// Starts with the odometry frame aligned to `truth`'s pose.
    pub fn new<R: Rng + ?Sized>(
        bus: &Bus,
        truth: &RobotTruth,
        cfg: RobotNodeConfig,
        rng: &mut R,
    ) -> Result<Self, BusError> {
        let id = truth.id.as_str();
        let mut noise = EncoderNoise::new(&cfg.encoder_noise, rng);
        let last_report = if cfg.quantize_ticks {
            noise.inject(&truth.encoders, rng)
        } else {
            truth.encoders
        };
        let reserved = channel::RESERVED
            .iter()
            .map(|c| bus.advertise(&TopicPath::new(id, c)?, None))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            id: id.to_owned(),
            cfg,
            cmd_sub: bus.subscribe_with_depth(&TopicPath::cmd_vel(id)?, 4),
            goal_sub: bus.subscribe_with_depth(&TopicPath::new(id, channel::POSITION_CMD)?, 4),
            global_sub: bus.subscribe_with_depth(&TopicPath::global_position(), 8),
            odom_pub: bus.advertise(&TopicPath::odom(id)?, Some(cfg.odom_hz))?,
            battery_pub: bus
                .advertise(&TopicPath::new(id, channel::BATTERY)?, Some(cfg.battery_hz))?,
            sound_pub: bus.advertise(&TopicPath::new(id, channel::SOUND)?, Some(cfg.sound_hz))?,
            _reserved: reserved,
            noise,
            estimate: OdometryEstimate::at(truth.pose, truth.encoders.timestamp_s),
            reported_ticks: (last_report.left_ticks, last_report.right_ticks),
            last_report,
            last_accum: (truth.tick_accum_left, truth.tick_accum_right),
            measured: (0.0, 0.0),
            command: Twist::ZERO,
            command_stamp_s: f64::NEG_INFINITY,
            drive: Drive::Velocity,
            camera_fix: None,
            others: Vec::new(),
            last_sound: 0.0,
        })
    }

    pub fn drive(&self) -> Drive {
        self.drive
    }

    pub fn set_drive(&mut self, drive: Drive) {
        self.drive = drive;
    }

    /// Twist the robot is executing this step.
    pub fn command(&self) -> Twist {
        self.command
    }

    fn read_bus(&mut self, now_s: f64) {
        if let Some(env) = self.cmd_sub.latest() {
            if let Payload::CmdVel { v_mps, w_radps } = env.payload {
                self.command = Twist::new(v_mps, w_radps);
                self.command_stamp_s = now_s;
            }
        }
        if let Some(env) = self.goal_sub.latest() {
            if let Payload::PositionCmd { x_m, y_m } = env.payload {
                self.drive = Drive::Goal(Vec2::new(x_m, y_m));
            }
        }
        for env in self.global_sub.drain() {
            if let Payload::GlobalPositions(entries) = env.payload {
                self.others.clear();
                for e in &entries {
                    if e.robot_id == self.id {
                        self.camera_fix = Some(Pose2D::new(e.x_m, e.y_m, e.theta_rad));
                    } else {
                        self.others.push(Vec2::new(e.x_m, e.y_m));
                    }
                }
            }
        }
    }

    fn guarded(&self, twist: Twist) -> Twist {
        let Some(pose) = self.camera_fix else {
            return twist;
        };
        let mut around = vec![pose.position()];
        around.extend_from_slice(&self.others);
        stop_guard(0, &pose, twist, &around, &self.cfg.guard)
    }

    /// Reads commands and sets both motor duties on `truth`.
    pub fn control(&mut self, truth: &mut RobotTruth, now_s: f64, dt: f64) {
        self.read_bus(now_s);
        let twist = match self.drive {
            Drive::Scripted(t) => t,
            Drive::Goal(goal) => {
                let pose = self.camera_fix.unwrap_or(self.estimate.pose);
                let t = position_controller(&pose, goal, &self.cfg.go_to_goal, &self.cfg.robot);
                if t == Twist::ZERO {
                    self.drive = Drive::Velocity;
                    self.command_stamp_s = f64::NEG_INFINITY;
                }
                self.guarded(t)
            }
            Drive::Velocity => {
                if now_s - self.command_stamp_s > self.cfg.command_timeout_s + 1e-9 {
                    Twist::ZERO
                } else {
                    // The onboard guard re-checks every camera frame between
                    // the slower swarm commands.
                    self.guarded(self.command)
                }
            }
        };
        let twist = saturate_twist(twist, &self.cfg.robot);
        self.command = twist;
        let setpoint = inverse_kinematics(twist, &self.cfg.robot).unwrap_or_default();
        truth.motor_left = pid_step(
            truth.motor_left,
            setpoint.left_radps,
            self.measured.0,
            dt,
            &self.cfg.pid,
        );
        truth.motor_right = pid_step(
            truth.motor_right,
            setpoint.right_radps,
            self.measured.1,
            dt,
            &self.cfg.pid,
        );
    }

    /// Reads the encoders after a world step, updates odometry and offers
    /// the sensor topics.
    pub fn sense<R: Rng + ?Sized>(
        &mut self,
        truth: &RobotTruth,
        world: &WorldState,
        dt: f64,
        rng: &mut R,
    ) {
        let params = &self.cfg.robot;
        if self.cfg.quantize_ticks {
            let report = self.noise.inject(&truth.encoders, rng);
            let a = params.radians_per_tick();
            self.measured = (
                (report.left_ticks - self.last_report.left_ticks) as f64 * a / dt,
                (report.right_ticks - self.last_report.right_ticks) as f64 * a / dt,
            );
            if let Ok(est) = update_odometry(&self.estimate, &self.last_report, &report, params) {
                self.estimate = est;
            }
            self.reported_ticks = (report.left_ticks, report.right_ticks);
            self.last_report = report;
        } else {
            let dl = truth.tick_accum_left - self.last_accum.0;
            let dr = truth.tick_accum_right - self.last_accum.1;
            let a = params.radians_per_tick();
            self.measured = (dl * a / dt, dr * a / dt);
            if let Ok(est) = update_odometry_from_deltas(&self.estimate, dl, dr, dt, params) {
                self.estimate = est;
            }
            self.last_accum = (truth.tick_accum_left, truth.tick_accum_right);
            self.reported_ticks = (truth.encoders.left_ticks, truth.encoders.right_ticks);
        }
        let pose = self.estimate.pose;
        self.odom_pub.publish(Payload::Odom {
            x_m: pose.x_m,
            y_m: pose.y_m,
            theta_rad: pose.theta_rad,
            v_mps: self.estimate.body_twist.linear_mps,
            w_radps: self.estimate.body_twist.angular_radps,
            stamp_s: self.estimate.stamp_s,
        });
        let capacity = world.params.power.capacity_wh;
        self.battery_pub.publish(Payload::Battery {
            level_wh: truth.battery_wh,
            fraction: truth.battery_wh / capacity,
            charging: truth.charging,
        });
        self.last_sound =
            sample_microphone(&truth.pose, &world.sound_sources, &self.cfg.sound_model);
        self.sound_pub.publish(Payload::Sound {
            intensity: self.last_sound,
        });
    }
}
