//! Deterministic experiment loop.
//!
//! Each step at `t = k·dt`: the camera may publish a frame, the bus
//! delivers, the charging lifecycle advances, the swarm executor may tick,
//! the bus delivers again, robots turn commands into duties, the state at
//! `t` is recorded, then the world advances by `dt` and robots read their
//! sensors. Randomness comes from separate ChaCha streams of the scenario
//! seed, so a (scenario, seed) pair fixes every byte of output.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use swarmtable_core::controllers::{FormationSpec, SwarmAlgorithm};
use swarmtable_core::geom::{centroid, min_pairwise_distance};
use swarmtable_core::tracking::{calibrate_frame, FrameCalibration};
use swarmtable_core::world::{ChargingStation, WorldParams, WorldState};
use swarmtable_core::{Twist, Vec2};

use crate::bus::{channel, Bus, BusError, Payload, Publisher, TopicPath};
use crate::executor::{ExecutorError, ExecutorSettings, ExecutorStats, SwarmExecutor, TickOutcome};
use crate::metrics::{compute, Summary};
use crate::robot::{Drive, RobotNode, RobotNodeConfig};
use crate::scenario::{Algorithm, ConfigError, Scenario};
use crate::server::{stations_exclusive, TrackingServer};
use crate::trajectory::{
    read_trajectory, TrajectoryError, TrajectoryHeader, TrajectoryRecord, TrajectoryWriter, FORMAT,
    VERSION,
};

/// Time the run continues after the swarm controller stops, so that the
/// log shows the robots coming to rest.
pub const SETTLE_S: f64 = 1.0;

const STREAM_POSES: u64 = 0;
const STREAM_CAMERA: u64 = 1;
const STREAM_ENCODERS: u64 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime violation at step {step}: {message}")]
    Violation { step: u64, message: String },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Core(#[from] swarmtable_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Violation { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Duration,
    Converged,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChargingEvent {
    pub step: u64,
    pub robot_id: String,
    pub event: String,
    pub station_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInfo {
    pub scenario: String,
    pub seed: u64,
    pub steps: u64,
    pub stop_reason: StopReason,
    pub executor: Option<ExecutorStats>,
    pub charging_events: Vec<ChargingEvent>,
    pub stations_exclusive_throughout: bool,
    pub boundary_contacts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub metrics: Summary,
    pub run: RunInfo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ChargeState {
    Normal,
    Waiting { retry_at_s: f64 },
    Docking,
    Charging,
}

struct Charger {
    state: ChargeState,
    station: Option<(String, Vec2, f64)>,
    goal_pub: Publisher,
}

/// Robot-to-vertex assignment minimizing `Σ |(x_i − x̄) − ξ_σ(i)|²` by
/// exhaustive search; identity beyond eight robots.
pub fn optimal_assignment(positions: &[Vec2], offsets: &[Vec2]) -> Vec<usize> {
    let n = positions.len();
    let mut best: Vec<usize> = (0..n).collect();
    if n > 8 || offsets.len() != n {
        return best;
    }
    let c = centroid(positions);
    let rel: Vec<Vec2> = positions.iter().map(|p| *p - c).collect();
    let score =
        |perm: &[usize]| -> f64 { rel.iter().zip(perm).map(|(x, &k)| x.dot(offsets[k])).sum() };
    let mut best_score = score(&best);
    let mut perm: Vec<usize> = (0..n).collect();
    // Heap's algorithm.
    let mut stack = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            let s = score(&perm);
            if s > best_score + 1e-12 {
                best_score = s;
                best = perm.clone();
            }
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One experiment in progress.
pub struct Simulation {
    scenario: Scenario,
    pub world: WorldState,
    bus: Bus,
    server: TrackingServer,
    nodes: Vec<RobotNode>,
    executor: Option<SwarmExecutor>,
    chargers: Vec<Charger>,
    encoder_rng: ChaCha8Rng,
    ids: Vec<String>,
    formation_offsets: Option<Vec<[f64; 2]>>,
    step: u64,
    max_steps: u64,
    next_control_s: f64,
    stop_at_step: Option<u64>,
    stop_reason: StopReason,
    events: Vec<ChargingEvent>,
    exclusive: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("scenario", &self.scenario.name)
            .field("step", &self.step)
            .finish()
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, RunError> {
        scenario.validate()?;
        let s = scenario.resolved();
        let ids = s.robot_ids();
        let poses = s.initial_poses(&mut stream(s.seed, STREAM_POSES))?;

        let params = WorldParams {
            robot: s.robot,
            plant: s.plant,
            power: s.power,
        };
        let mut world = WorldState::new((s.table_size_m[0], s.table_size_m[1]), params, s.seed);
        world.sound_sources = s.sound.sources.iter().map(|c| c.to_source()).collect();
        world.charging_stations = s
            .charging
            .stations
            .iter()
            .map(|c| ChargingStation {
                id: c.id.clone(),
                position: Vec2::new(c.position[0], c.position[1]),
                occupied_by: None,
                charge_rate_w: c.charge_rate_w,
            })
            .collect();
        for (id, pose) in ids.iter().zip(&poses) {
            let i = world.add_robot(id.clone(), *pose)?;
            world.robots[i].battery_wh = s.robots.initial_battery_fraction * s.power.capacity_wh;
        }

        let bus = Bus::new();
        let f = &s.frame;
        let calibration = if *f == crate::scenario::FrameConfig::default() {
            FrameCalibration::identity()
        } else {
            calibrate_frame(
                Vec2::new(f.origin[0], f.origin[1]),
                Vec2::new(f.x_axis[0], f.x_axis[1]),
                Vec2::new(f.y_axis[0], f.y_axis[1]),
                f.marker_spacing_m,
            )
            .map_err(|e| ConfigError::Invalid {
                field: "frame".into(),
                message: e.to_string(),
            })?
        };
        let server = TrackingServer::new(
            &bus,
            calibration,
            s.noise.camera,
            stream(s.seed, STREAM_CAMERA),
            s.rates.camera_hz,
            world.charging_stations.clone(),
            ids.clone(),
        )?;

        let mut encoder_rng = stream(s.seed, STREAM_ENCODERS);
        let node_cfg = RobotNodeConfig {
            robot: s.robot,
            pid: s.pid,
            go_to_goal: s.go_to_goal,
            encoder_noise: s.noise.encoder,
            quantize_ticks: s.noise.quantize_ticks,
            command_timeout_s: s.executor.command_timeout_s,
            odom_hz: s.rates.odom_hz,
            battery_hz: s.rates.battery_hz,
            sound_hz: s.rates.sound_hz,
            sound_model: s.sound.model,
            guard: s.swarm,
        };
        let mut nodes = Vec::with_capacity(ids.len());
        for truth in &world.robots {
            nodes.push(RobotNode::new(&bus, truth, node_cfg, &mut encoder_rng)?);
        }

        let mut formation_offsets = None;
        let algorithm = match s.algorithm {
            Algorithm::Rendezvous => Some(SwarmAlgorithm::Rendezvous),
            Algorithm::SoundRendezvous => Some(SwarmAlgorithm::SoundRendezvous),
            Algorithm::Formation => {
                let base = if s.formation.offsets.is_empty() {
                    FormationSpec::regular_polygon(ids.len(), s.formation.side_m)
                } else {
                    FormationSpec::new(
                        s.formation
                            .offsets
                            .iter()
                            .map(|o| Vec2::new(o[0], o[1]))
                            .collect(),
                    )
                };
                let assignment = if s.formation.optimal_assignment {
                    let starts: Vec<Vec2> = poses.iter().map(|p| p.position()).collect();
                    optimal_assignment(&starts, &base.offsets)
                } else {
                    (0..ids.len()).collect()
                };
                let spec = FormationSpec::with_assignment(base.offsets, assignment);
                formation_offsets = Some(
                    (0..ids.len())
                        .map(|i| spec.offset_of(i))
                        .map(|o| [o.x, o.y])
                        .collect(),
                );
                Some(SwarmAlgorithm::Formation(spec))
            }
            Algorithm::Script | Algorithm::Idle => None,
        };
        let executor = match algorithm {
            Some(a) => Some(SwarmExecutor::new(
                &bus,
                &ids,
                a,
                s.swarm,
                s.go_to_goal,
                s.robot,
                ExecutorSettings {
                    position_source: s.executor.position_source,
                    staleness_s: s.executor.staleness_s,
                    smoothing_window: s.executor.smoothing_window,
                    gather_radius_m: s.executor.gather_radius_m,
                },
            )?),
            None => None,
        };

        let chargers = ids
            .iter()
            .map(|id| {
                Ok(Charger {
                    state: ChargeState::Normal,
                    station: None,
                    goal_pub: bus.advertise(&TopicPath::new(id, channel::POSITION_CMD)?, None)?,
                })
            })
            .collect::<Result<Vec<_>, BusError>>()?;

        let max_steps = s.max_steps();
        Ok(Self {
            scenario: s,
            world,
            bus,
            server,
            nodes,
            executor,
            chargers,
            encoder_rng,
            ids,
            formation_offsets,
            step: 0,
            max_steps,
            next_control_s: 0.0,
            stop_at_step: None,
            stop_reason: StopReason::Duration,
            events: Vec::new(),
            exclusive: true,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn robot_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn executor(&self) -> Option<&SwarmExecutor> {
        self.executor.as_ref()
    }

    pub fn executor_mut(&mut self) -> Option<&mut SwarmExecutor> {
        self.executor.as_mut()
    }

    pub fn nodes(&self) -> &[RobotNode] {
        &self.nodes
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn header(&self) -> TrajectoryHeader {
        let s = &self.scenario;
        TrajectoryHeader {
            format: FORMAT.into(),
            version: VERSION,
            scenario: s.name.clone(),
            seed: s.seed,
            dt_s: s.dt_s,
            robots: self.ids.clone(),
            algorithm: s.algorithm.name().into(),
            footprint_radius_m: s.robot.footprint_radius_m,
            convergence_threshold_m: match s.algorithm {
                Algorithm::SoundRendezvous => s.executor.gather_radius_m,
                Algorithm::Formation => s.swarm.convergence_tol_m,
                _ => s.swarm.gather_distance_m(),
            },
            formation_offsets: self.formation_offsets.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.step >= self.max_steps || self.stop_at_step.is_some_and(|k| self.step >= k)
    }

    pub fn info(&self) -> RunInfo {
        RunInfo {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            steps: self.step,
            stop_reason: self.stop_reason,
            executor: self.executor.as_ref().map(SwarmExecutor::stats),
            charging_events: self.events.clone(),
            stations_exclusive_throughout: self.exclusive,
            boundary_contacts: self.world.robots.iter().map(|r| r.boundary_contacts).sum(),
        }
    }

    fn event(&mut self, robot: usize, event: &str, station: Option<String>) {
        self.events.push(ChargingEvent {
            step: self.step,
            robot_id: self.ids[robot].clone(),
            event: event.into(),
            station_id: station,
        });
    }

    fn charging(&mut self, now: f64) -> Result<(), RunError> {
        if self.world.charging_stations.is_empty() {
            return Ok(());
        }
        let cfg = self.scenario.charging.clone();
        let capacity = self.scenario.power.capacity_wh;
        for i in 0..self.ids.len() {
            let fraction = self.world.robots[i].battery_wh / capacity;
            match self.chargers[i].state {
                ChargeState::Normal if fraction < cfg.low_fraction => self.ask(i, now)?,
                ChargeState::Waiting { retry_at_s } if now + 1e-9 >= retry_at_s => {
                    self.ask(i, now)?
                }
                ChargeState::Docking => {
                    let (_, at, rate) = self.chargers[i]
                        .station
                        .clone()
                        .expect("docking has a station");
                    if self.world.robots[i].pose.position().distance(at) <= cfg.dock_tol_m {
                        let r = &mut self.world.robots[i];
                        r.charging = true;
                        r.charge_rate_w = rate;
                        self.nodes[i].set_drive(Drive::Scripted(Twist::ZERO));
                        self.chargers[i].state = ChargeState::Charging;
                        let station = self.chargers[i].station.as_ref().map(|s| s.0.clone());
                        self.event(i, "docked", station);
                    } else if self.nodes[i].drive() == Drive::Velocity {
                        self.chargers[i].goal_pub.publish(Payload::PositionCmd {
                            x_m: at.x,
                            y_m: at.y,
                        });
                    }
                }
                ChargeState::Charging if fraction >= cfg.resume_fraction => {
                    self.world.robots[i].charging = false;
                    let (station, _, _) = self.chargers[i]
                        .station
                        .take()
                        .expect("charging has a station");
                    self.bus.request(
                        &TopicPath::charging_request(),
                        Payload::ChargingRelease {
                            robot_id: self.ids[i].clone(),
                        },
                        cfg.request_timeout_s,
                    )?;
                    self.nodes[i].set_drive(Drive::Velocity);
                    self.chargers[i].state = ChargeState::Normal;
                    if let Some(exec) = &mut self.executor {
                        exec.add_robot(&self.ids[i])?;
                    }
                    self.event(i, "released", Some(station));
                }
                _ => {}
            }
        }
        self.exclusive &= stations_exclusive(&self.server.stations());
        self.world.charging_stations = self.server.stations();
        Ok(())
    }

    fn ask(&mut self, i: usize, now: f64) -> Result<(), RunError> {
        let cfg = &self.scenario.charging;
        let pos = self.world.robots[i].pose.position();
        let reply = self.bus.request(
            &TopicPath::charging_request(),
            Payload::ChargingRequest {
                robot_id: self.ids[i].clone(),
                x_m: pos.x,
                y_m: pos.y,
            },
            cfg.request_timeout_s,
        );
        let retry = ChargeState::Waiting {
            retry_at_s: now + cfg.retry_s,
        };
        match reply {
            Ok(Payload::ChargingReply(Some(grant))) => {
                let at = Vec2::new(grant.x_m, grant.y_m);
                let rate = self
                    .world
                    .charging_stations
                    .iter()
                    .find(|s| s.id == grant.station_id)
                    .map_or(0.0, |s| s.charge_rate_w);
                self.chargers[i].station = Some((grant.station_id.clone(), at, rate));
                self.chargers[i].state = ChargeState::Docking;
                self.chargers[i].goal_pub.publish(Payload::PositionCmd {
                    x_m: at.x,
                    y_m: at.y,
                });
                if let Some(exec) = &mut self.executor {
                    if exec.robots().contains(&self.ids[i]) {
                        exec.remove_robot(&self.ids[i])?;
                    }
                }
                self.event(i, "granted", Some(grant.station_id));
            }
            Ok(_) => {
                if self.chargers[i].state == ChargeState::Normal {
                    self.event(i, "queued", None);
                }
                self.chargers[i].state = retry;
            }
            Err(BusError::Timeout { .. }) => self.chargers[i].state = retry,
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), RunError> {
        let floor = 2.0 * self.scenario.robot.footprint_radius_m;
        for (r, n) in self.world.robots.iter().zip(&self.nodes) {
            if !r.pose.is_finite() || !n.estimate.pose.is_finite() {
                return Err(RunError::Violation {
                    step: self.step,
                    message: format!("robot {} has a non-finite pose", r.id),
                });
            }
        }
        let pts: Vec<Vec2> = self
            .world
            .robots
            .iter()
            .map(|r| r.pose.position())
            .collect();
        if pts.len() >= 2 {
            let d = min_pairwise_distance(&pts);
            if d < floor - 1e-12 {
                return Err(RunError::Violation {
                    step: self.step,
                    message: format!(
                        "robots overlap: closest pair {d:.6} m apart, floor {floor} m"
                    ),
                });
            }
        }
        Ok(())
    }

    fn script_twist(&self, now: f64) -> Twist {
        let mut t0 = 0.0;
        for seg in &self.scenario.script {
            if now + 1e-9 < t0 + seg.duration_s {
                return Twist::new(seg.v_mps, seg.w_radps);
            }
            t0 += seg.duration_s;
        }
        Twist::ZERO
    }

    /// Advances one step and returns the records of the state at its start.
    pub fn advance(&mut self) -> Result<Vec<TrajectoryRecord>, RunError> {
        let dt = self.scenario.dt_s;
        let now = self.step as f64 * dt;
        self.world.sim_time_s = now;
        self.check()?;

        let frame = self.server.poll(&self.world);
        self.bus.flush(now);
        self.charging(now)?;

        if now + 1e-9 >= self.next_control_s {
            self.next_control_s += 1.0 / self.scenario.rates.control_hz;
            if let Some(exec) = &mut self.executor {
                let outcome = exec.tick(now)?;
                if self.stop_at_step.is_none() && self.scenario.stop_on_convergence {
                    let reason = match outcome {
                        TickOutcome::Converged => Some(StopReason::Converged),
                        TickOutcome::Exhausted => Some(StopReason::Exhausted),
                        _ => None,
                    };
                    if let Some(reason) = reason {
                        self.stop_reason = reason;
                        self.stop_at_step = Some(self.step + (SETTLE_S / dt).round() as u64);
                    }
                }
            }
        }
        self.bus.flush(now);

        if self.scenario.algorithm == Algorithm::Script {
            let t = self.script_twist(now);
            for (i, node) in self.nodes.iter_mut().enumerate() {
                if self.chargers[i].state == ChargeState::Normal
                    || matches!(self.chargers[i].state, ChargeState::Waiting { .. })
                {
                    node.set_drive(Drive::Scripted(t));
                }
            }
        }
        for (node, truth) in self.nodes.iter_mut().zip(self.world.robots.iter_mut()) {
            node.control(truth, now, dt);
        }

        let camera: BTreeMap<&str, [f64; 3]> = frame
            .iter()
            .flatten()
            .map(|r| {
                (
                    r.robot_id.as_str(),
                    [r.pose.x_m, r.pose.y_m, r.pose.theta_rad],
                )
            })
            .collect();
        let records = self
            .world
            .robots
            .iter()
            .zip(&self.nodes)
            .map(|(truth, node)| {
                let odom = node.estimate.pose;
                let cmd = node.command();
                TrajectoryRecord {
                    step: self.step,
                    t_s: now,
                    robot_id: truth.id.clone(),
                    truth: [truth.pose.x_m, truth.pose.y_m, truth.pose.theta_rad],
                    odom: [odom.x_m, odom.y_m, odom.theta_rad],
                    camera: camera.get(truth.id.as_str()).copied(),
                    cmd: [cmd.linear_mps, cmd.angular_radps],
                    wheels: [
                        truth.motor_left.wheel_speed_radps,
                        truth.motor_right.wheel_speed_radps,
                    ],
                    ticks: [node.reported_ticks.0, node.reported_ticks.1],
                    battery_wh: truth.battery_wh,
                    sound: node.last_sound,
                }
            })
            .collect();

        self.world.step(dt)?;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            node.sense(
                &self.world.robots[i],
                &self.world,
                dt,
                &mut self.encoder_rng,
            );
        }
        self.step += 1;
        Ok(records)
    }

    /// Runs to the end, handing every record to `sink`.
    pub fn run<F>(&mut self, mut sink: F) -> Result<RunInfo, RunError>
    where
        F: FnMut(TrajectoryRecord) -> Result<(), RunError>,
    {
        while !self.finished() {
            for r in self.advance()? {
                sink(r)?;
            }
        }
        Ok(self.info())
    }
}

/// Runs a scenario in memory and returns the raw records.
pub fn simulate(
    scenario: &Scenario,
) -> Result<(Vec<TrajectoryRecord>, RunInfo, Simulation), RunError> {
    let mut sim = Simulation::new(scenario)?;
    let mut records = Vec::new();
    let info = sim.run(|r| {
        records.push(r);
        Ok(())
    })?;
    Ok((records, info, sim))
}

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.resolved.json";

/// Runs a scenario and writes the trajectory, summary and resolved config
/// into `out_dir`. The summary metrics are recomputed from the written log.
pub fn run_to_dir(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary, RunError> {
    scenario.validate()?;
    fs::create_dir_all(out_dir)?;
    let resolved = scenario.resolved();
    fs::write(
        out_dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&resolved).map_err(std::io::Error::from)? + "\n",
    )?;
    let mut sim = Simulation::new(&resolved)?;
    let traj_path = out_dir.join(TRAJECTORY_FILE);
    let mut writer =
        TrajectoryWriter::new(BufWriter::new(File::create(&traj_path)?), sim.header())?;
    let result = sim.run(|r| {
        writer.write(r)?;
        Ok(())
    });
    writer.finish()?;
    let info = result?;
    let traj = read_trajectory(BufReader::new(File::open(&traj_path)?))?;
    let summary = RunSummary {
        metrics: compute(&traj),
        run: info,
    };
    fs::write(
        out_dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)? + "\n",
    )?;
    Ok(summary)
}
