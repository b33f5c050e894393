//! Periodic swarm controller talking to robots only through the bus.
//!
//! One tick: gather positions (camera or odometry), evaluate the swarm law,
//! scale by ε, add repulsion, turn each planar velocity into a twist, cap the
//! approach speed, publish `/<robot>/cmd_vel`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use swarmtable_core::controllers::{
    collision_avoidance, constrain_approach, planar_velocity_to_twist, stop_guard, FormationSpec,
    GoToGoalParams, SwarmAlgorithm, SwarmConfig,
};
use swarmtable_core::geom::{centroid, max_pairwise_distance};
use swarmtable_core::{Pose2D, RobotParams, Vec2};

use crate::bus::{channel, Bus, BusError, Payload, Publisher, Subscription, TopicPath};

/// Planar speed under which the swarm counts as settled.
pub const SETTLED_SPEED_MPS: f64 = 1e-3;
const BLOCKED_FRACTION: f64 = 0.3;
const SWIRL_FRACTION: f64 = 0.5;
const LEADER_MARGIN: f64 = 0.1;
const ROOM_MARGIN_M: f64 = 0.04;
const TIE_FRACTION: f64 = 0.05;
const ARRIVE_SLACK_M: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSource {
    #[default]
    Camera,
    Odometry,
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Control(#[from] swarmtable_core::Error),
    #[error("robot `{0}` is not part of the swarm")]
    UnknownRobot(String),
    #[error("robot `{0}` is already part of the swarm")]
    DuplicateRobot(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutorSettings {
    pub position_source: PositionSource,
    pub staleness_s: f64,
    pub smoothing_window: usize,
    pub gather_radius_m: f64,
}

impl Default for ExecutorSettings {
    fn default() -> Self {
        Self {
            position_source: PositionSource::Camera,
            staleness_s: 0.2,
            smoothing_window: 5,
            gather_radius_m: 0.14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickOutcome {
    Commanded,
    /// Position data was missing or too old; nothing was published.
    Stale,
    /// Fewer than two robots are active.
    Idle,
    Converged,
    /// `max_steps` ticks ran without convergence.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExecutorStats {
    pub ticks: u64,
    pub commanded: u64,
    pub skipped_stale: u64,
    pub converged_at_tick: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
struct Fix {
    pose: Pose2D,
    stamp_s: f64,
}

struct Member {
    cmd: Publisher,
    odom: Subscription,
    sound: Subscription,
    fix: Option<Fix>,
    intensity: f64,
}

pub struct SwarmExecutor {
    bus: Bus,
    cfg: SwarmConfig,
    go_to_goal: GoToGoalParams,
    robot: RobotParams,
    algorithm: SwarmAlgorithm,
    /// Offsets by robot id for formation control.
    offsets: BTreeMap<String, Vec2>,
    settings: ExecutorSettings,
    global: Subscription,
    members: BTreeMap<String, Member>,
    /// Latest camera positions of robots outside the swarm.
    obstacles: BTreeMap<String, Vec2>,
    history: VecDeque<BTreeMap<String, Vec2>>,
    stats: ExecutorStats,
    done: Option<TickOutcome>,
    /// Robot the sound-guided swarm is currently gathering on.
    leader: Option<String>,
}

impl std::fmt::Debug for SwarmExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SwarmExecutor")
            .field("robots", &self.members.keys().collect::<Vec<_>>())
            .field("stats", &self.stats)
            .finish()
    }
}

impl SwarmExecutor {
    /// For `SwarmAlgorithm::Formation`, offsets are matched to `robots` in
    /// the given order through the spec's assignment.
    pub fn new(
        bus: &Bus,
        robots: &[String],
        algorithm: SwarmAlgorithm,
        cfg: SwarmConfig,
        go_to_goal: GoToGoalParams,
        robot: RobotParams,
        settings: ExecutorSettings,
    ) -> Result<Self, ExecutorError> {
        let mut offsets = BTreeMap::new();
        if let SwarmAlgorithm::Formation(spec) = &algorithm {
            spec.validate(robots.len())?;
            for (i, id) in robots.iter().enumerate() {
                offsets.insert(id.clone(), spec.offset_of(i));
            }
        }
        let mut exec = Self {
            bus: bus.clone(),
            cfg,
            go_to_goal,
            robot,
            algorithm,
            offsets,
            settings,
            global: bus.subscribe_with_depth(&TopicPath::global_position(), 64),
            members: BTreeMap::new(),
            obstacles: BTreeMap::new(),
            history: VecDeque::new(),
            stats: ExecutorStats::default(),
            done: None,
            leader: None,
        };
        for id in robots {
            exec.add_robot(id)?;
        }
        Ok(exec)
    }

    pub fn robots(&self) -> Vec<String> {
        self.members.keys().cloned().collect()
    }

    pub fn stats(&self) -> ExecutorStats {
        self.stats
    }

    /// Set once the executor has stopped commanding.
    pub fn finished(&self) -> Option<TickOutcome> {
        self.done
    }

    pub fn add_robot(&mut self, id: &str) -> Result<(), ExecutorError> {
        if self.members.contains_key(id) {
            return Err(ExecutorError::DuplicateRobot(id.to_owned()));
        }
        let cmd = self.bus.advertise(&TopicPath::cmd_vel(id)?, None)?;
        let member = Member {
            cmd,
            odom: self.bus.subscribe_with_depth(&TopicPath::odom(id)?, 4),
            sound: self
                .bus
                .subscribe_with_depth(&TopicPath::new(id, channel::SOUND)?, 4),
            fix: None,
            intensity: 0.0,
        };
        self.members.insert(id.to_owned(), member);
        self.obstacles.remove(id);
        self.history.clear();
        Ok(())
    }

    /// Sends the robot a final stop and releases its command topic.
    pub fn remove_robot(&mut self, id: &str) -> Result<(), ExecutorError> {
        let member = self
            .members
            .remove(id)
            .ok_or_else(|| ExecutorError::UnknownRobot(id.to_owned()))?;
        member.cmd.publish(Payload::CmdVel {
            v_mps: 0.0,
            w_radps: 0.0,
        });
        self.history.clear();
        Ok(())
    }

    fn gather(&mut self, now_s: f64) {
        // Camera frames that arrived since the last tick are averaged.
        let mut sums: BTreeMap<String, (Vec2, Vec2, f64, u32)> = BTreeMap::new();
        for env in self.global.drain() {
            if let Payload::GlobalPositions(entries) = env.payload {
                for e in entries {
                    let s = sums
                        .entry(e.robot_id)
                        .or_insert((Vec2::ZERO, Vec2::ZERO, 0.0, 0));
                    s.0 += Vec2::new(e.x_m, e.y_m);
                    s.1 += Vec2::from_angle(e.theta_rad);
                    s.2 = s.2.max(e.stamp_s);
                    s.3 += 1;
                }
            }
        }
        for (id, (p, _, _, n)) in &sums {
            if !self.members.contains_key(id) {
                self.obstacles
                    .insert(id.clone(), *p * (1.0 / f64::from(*n)));
            }
        }
        for (id, m) in self.members.iter_mut() {
            if let Some(env) = m.sound.latest() {
                if let Payload::Sound { intensity } = env.payload {
                    m.intensity = intensity;
                }
            }
            match self.settings.position_source {
                PositionSource::Camera => {
                    if let Some((p, h, stamp, n)) = sums.get(id) {
                        let p = *p * (1.0 / f64::from(*n));
                        m.fix = Some(Fix {
                            pose: Pose2D::new(p.x, p.y, h.angle()),
                            stamp_s: *stamp,
                        });
                    }
                }
                PositionSource::Odometry => {
                    if let Some(env) = m.odom.latest() {
                        if let Payload::Odom {
                            x_m,
                            y_m,
                            theta_rad,
                            ..
                        } = env.payload
                        {
                            m.fix = Some(Fix {
                                pose: Pose2D::new(x_m, y_m, theta_rad),
                                stamp_s: env.stamp_s.min(now_s),
                            });
                        }
                    }
                }
            }
        }
    }

    fn law(&self, ids: &[&String]) -> SwarmAlgorithm {
        match &self.algorithm {
            SwarmAlgorithm::Formation(_) => SwarmAlgorithm::Formation(FormationSpec::new(
                ids.iter().map(|id| self.offsets[*id]).collect(),
            )),
            other => other.clone(),
        }
    }

    /// Measure the convergence predicate is compared against, on
    /// window-averaged positions.
    fn spread(
        &self,
        ids: &[&String],
        intensities: &[f64],
    ) -> Result<Option<(f64, f64)>, ExecutorError> {
        if self.history.len() < self.settings.smoothing_window {
            return Ok(None);
        }
        let mut mean = vec![Vec2::ZERO; ids.len()];
        for frame in &self.history {
            for (k, id) in ids.iter().enumerate() {
                mean[k] += frame[*id];
            }
        }
        let scale = 1.0 / self.history.len() as f64;
        for m in &mut mean {
            *m = *m * scale;
        }
        // Rendezvous stops half a tolerance inside `2·r_s + tol`; the rest is
        // headroom for camera noise in the smoothed positions.
        let gather = self.cfg.gather_distance_m() - 0.5 * self.cfg.convergence_tol_m;
        // Every snapshot in the window must be gathered, so a swarm that is
        // still moving cannot pass on the average of its positions.
        let widest = self
            .history
            .iter()
            .map(|frame| {
                let pts: Vec<Vec2> = ids.iter().map(|id| frame[*id]).collect();
                max_pairwise_distance(&pts)
            })
            .fold(0.0, f64::max);
        Ok(Some(match self.law(ids) {
            SwarmAlgorithm::Rendezvous => (widest, gather),
            SwarmAlgorithm::SoundRendezvous if intensities.iter().all(|&s| s == 0.0) => {
                (widest, gather)
            }
            SwarmAlgorithm::SoundRendezvous => {
                // Robots in a near tie for loudest can swap places by the
                // last sample, so the swarm must be gathered on each of them.
                let top = intensities[loudest(intensities)];
                let contenders: Vec<&String> = ids
                    .iter()
                    .zip(intensities)
                    .filter(|(_, &s)| s >= (1.0 - TIE_FRACTION) * top)
                    .map(|(id, _)| *id)
                    .collect();
                let worst = self
                    .history
                    .iter()
                    .flat_map(|frame| {
                        contenders.iter().flat_map(move |lead| {
                            frame.values().map(move |p| p.distance(frame[*lead]))
                        })
                    })
                    .fold(0.0, f64::max);
                (worst, self.settings.gather_radius_m)
            }
            SwarmAlgorithm::Formation(spec) => (spec.residual(&mean)?, self.cfg.formation_tol_m),
        }))
    }

    fn stop_all(&self) {
        for m in self.members.values() {
            m.cmd.publish(Payload::CmdVel {
                v_mps: 0.0,
                w_radps: 0.0,
            });
        }
    }

    /// Leader with hysteresis. A louder robot takes over only when it beats
    /// the current leader by `LEADER_MARGIN`, or once everyone has gathered
    /// on the current leader. The leader's intensity rises at every switch,
    /// so leadership cannot cycle through robots at equal range from the
    /// source.
    fn pick_leader(
        leader: &mut Option<String>,
        radius: f64,
        ids: &[&String],
        positions: &[Vec2],
        intensities: &[f64],
    ) -> usize {
        let loudest_now = loudest(intensities);
        let current = leader
            .as_ref()
            .and_then(|id| ids.iter().position(|x| *x == id));
        let lead = match current {
            Some(c) if c != loudest_now => {
                let gathered = positions.iter().all(|p| p.distance(positions[c]) <= radius);
                let clearly = intensities[loudest_now] > (1.0 + LEADER_MARGIN) * intensities[c];
                if clearly || gathered {
                    loudest_now
                } else {
                    c
                }
            }
            _ => loudest_now,
        };
        *leader = Some(ids[lead].clone());
        lead
    }

    /// Runs one control tick at sim time `now_s`.
    pub fn tick(&mut self, now_s: f64) -> Result<TickOutcome, ExecutorError> {
        if let Some(done) = self.done {
            return Ok(done);
        }
        self.gather(now_s);
        if self.stats.ticks >= self.cfg.max_steps {
            self.stop_all();
            self.done = Some(TickOutcome::Exhausted);
            return Ok(TickOutcome::Exhausted);
        }
        self.stats.ticks += 1;
        if self.members.len() < 2 {
            self.stop_all();
            return Ok(TickOutcome::Idle);
        }
        let fresh = self.members.values().all(|m| {
            m.fix
                .is_some_and(|f| now_s - f.stamp_s <= self.settings.staleness_s + 1e-9)
        });
        if !fresh {
            self.stats.skipped_stale += 1;
            return Ok(TickOutcome::Stale);
        }

        let ids: Vec<&String> = self.members.keys().collect();
        let poses: Vec<Pose2D> = self
            .members
            .values()
            .map(|m| m.fix.expect("fresh").pose)
            .collect();
        let positions: Vec<Vec2> = poses.iter().map(Pose2D::position).collect();
        let intensities: Vec<f64> = self.members.values().map(|m| m.intensity).collect();

        self.history.push_back(
            ids.iter()
                .map(|id| (*id).clone())
                .zip(positions.iter().copied())
                .collect(),
        );
        while self.history.len() > self.settings.smoothing_window {
            self.history.pop_front();
        }

        let law = self.law(&ids);
        let heard = intensities.iter().any(|&s| s != 0.0);
        let lead = match &law {
            SwarmAlgorithm::SoundRendezvous if heard => Some(Self::pick_leader(
                &mut self.leader,
                self.settings.gather_radius_m,
                &ids,
                &positions,
                &intensities,
            )),
            _ => None,
        };
        // The law sees the chosen leader as the only robot that hears anything.
        let drive: Vec<f64> = match lead {
            Some(l) => (0..ids.len())
                .map(|i| if i == l { 1.0 } else { 0.0 })
                .collect(),
            None => intensities.clone(),
        };
        let mut raw = law.velocities(&positions, &drive, &self.cfg)?;
        // Followers that have arrived stop pressing on the leader, so the
        // cluster stops reshuffling the robots closest to the source.
        if let Some(l) = lead {
            let arrive = self.settings.gather_radius_m - ARRIVE_SLACK_M;
            for (i, v) in raw.iter_mut().enumerate() {
                if positions[i].distance(positions[l]) <= arrive {
                    *v = Vec2::ZERO;
                }
            }
        }
        // Robots outside the swarm take part in avoidance as fixed obstacles.
        let mut everyone = positions.clone();
        everyone.extend(self.obstacles.values().copied());
        // A sound follower has one attractor where a rendezvous robot sums
        // N−1, so its gain is ε(N−1), which the stability bound keeps below 1.
        let gain = match lead {
            Some(_) => self.cfg.gain_epsilon * (positions.len() - 1) as f64,
            None => self.cfg.gain_epsilon,
        };
        let mut scaled: Vec<Vec2> = raw.iter().map(|v| *v * gain).collect();
        scaled.resize(everyone.len(), Vec2::ZERO);
        let avoided = collision_avoidance(&everyone, &scaled, &self.cfg)?;
        let mut planar: Vec<Vec2> = (0..positions.len())
            .map(|i| constrain_approach(i, &everyone, avoided[i], &self.cfg))
            .collect();
        // The wedged robot farthest from the gathering point circles the
        // swarm until a gap opens. Only one moves so the jam cannot just
        // rotate as a rigid body.
        let centre = match (&law, lead) {
            (_, Some(l)) => Some(positions[l]),
            (SwarmAlgorithm::Formation(_), _) => None,
            _ => Some(centroid(&positions)),
        };
        let wedged = centre.and_then(|centre| {
            (0..positions.len())
                .filter(|&i| {
                    let want = avoided[i].norm();
                    want > SETTLED_SPEED_MPS && planar[i].norm() < BLOCKED_FRACTION * want
                })
                .max_by(|&a, &b| {
                    positions[a]
                        .distance(centre)
                        .total_cmp(&positions[b].distance(centre))
                })
        });
        if let (Some(i), Some(centre)) = (wedged, centre) {
            let push = avoided[i].norm() * SWIRL_FRACTION;
            let swirl = Vec2::new(-avoided[i].y, avoided[i].x) * SWIRL_FRACTION;
            planar[i] = constrain_approach(i, &everyone, planar[i] + swirl, &self.cfg);
            // Around a leader, inner robots pressing on the wedged one slide
            // around it and away, which opens the gap it is waiting for.
            let reach = self.cfg.stop_distance_m + ROOM_MARGIN_M;
            let depth = positions[i].distance(centre);
            for j in 0..positions.len() {
                if lead.is_none() || j == i || Some(j) == lead {
                    continue;
                }
                let radial = positions[j] - centre;
                if positions[j].distance(positions[i]) > reach || radial.norm() >= depth {
                    continue;
                }
                let Some(r) = radial.normalized() else {
                    continue;
                };
                let mut tangent = Vec2::new(-r.y, r.x);
                if tangent.dot(positions[j] - positions[i]) < 0.0 {
                    tangent = tangent * -1.0;
                }
                planar[j] = constrain_approach(j, &everyone, planar[j] + tangent * push, &self.cfg);
            }
        }

        let settled = planar.iter().all(|v| v.norm() < SETTLED_SPEED_MPS);
        let within = self
            .spread(&ids, &intensities)?
            .is_some_and(|(measure, limit)| measure <= limit);
        if settled || within {
            self.stats.converged_at_tick = Some(self.stats.ticks);
            self.stop_all();
            self.done = Some(TickOutcome::Converged);
            return Ok(TickOutcome::Converged);
        }

        for (i, m) in self.members.values().enumerate() {
            let twist =
                planar_velocity_to_twist(&poses[i], planar[i], &self.go_to_goal, &self.robot);
            let twist = stop_guard(i, &poses[i], twist, &everyone, &self.cfg);
            m.cmd.publish(Payload::CmdVel {
                v_mps: twist.linear_mps,
                w_radps: twist.angular_radps,
            });
        }
        self.stats.commanded += 1;
        Ok(TickOutcome::Commanded)
    }
}

/// Index of the largest intensity, ties to the lowest index.
pub fn loudest(intensities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in intensities.iter().enumerate() {
        if s > intensities[best] {
            best = i;
        }
    }
    best
}
