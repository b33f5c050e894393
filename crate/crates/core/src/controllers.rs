//! Swarm control laws and the per-robot go-to-goal controller.
//!
//! The swarm laws return raw continuous-time planar velocities. Gain,
//! collision avoidance and conversion to a differential-drive [`Twist`] are
//! applied separately so each stage can be checked on its own.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Vec2};
use crate::kinematics::{saturate_twist, Pose2D, RobotParams, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NeighborGraph {
    #[default]
    Complete,
    /// Robots within `comm_radius_m` of each other are neighbours.
    RadiusLimited { comm_radius_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SwarmConfig {
    /// Step gain ε applied to the consensus velocities.
    pub gain_epsilon: f64,
    pub neighbor_graph: NeighborGraph,
    /// Repulsion acts between robots closer than this.
    pub safety_radius_m: f64,
    pub repulsion_gain: f64,
    pub convergence_tol_m: f64,
    /// Tolerance on the formation residual `max |χ_i − mean χ|`.
    pub formation_tol_m: f64,
    /// Control ticks before the executor gives up.
    pub max_steps: u64,
    /// Centre distance at which approach speed must reach zero.
    pub stop_distance_m: f64,
    /// Allowed approach speed per metre of gap above `stop_distance_m`.
    pub brake_gain_per_s: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            gain_epsilon: 0.2,
            neighbor_graph: NeighborGraph::Complete,
            safety_radius_m: 0.12,
            repulsion_gain: 1.0,
            convergence_tol_m: 0.02,
            formation_tol_m: 0.004,
            max_steps: 1200,
            stop_distance_m: 0.115,
            brake_gain_per_s: 1.5,
        }
    }
}

impl SwarmConfig {
    /// Checks the discrete-consensus stability bound `ε·(N−1) < 1` (complete
    /// graph) and that the safety radius covers two footprints.
    pub fn validate(&self, robot_count: usize, robot: &RobotParams) -> Result<()> {
        if !(self.gain_epsilon > 0.0 && self.gain_epsilon.is_finite()) {
            return Err(Error::InvalidParams {
                field: "gain_epsilon",
                reason: "must be finite and > 0",
            });
        }
        let degree = robot_count.saturating_sub(1) as f64;
        if matches!(self.neighbor_graph, NeighborGraph::Complete)
            && self.gain_epsilon * degree >= 1.0
        {
            return Err(Error::InvalidParams {
                field: "gain_epsilon",
                reason: "gain_epsilon * (N - 1) must be < 1",
            });
        }
        if let NeighborGraph::RadiusLimited { comm_radius_m } = self.neighbor_graph {
            if !(comm_radius_m > 0.0) {
                return Err(Error::InvalidParams {
                    field: "neighbor_graph",
                    reason: "comm_radius_m must be > 0",
                });
            }
        }
        let floor = 2.0 * robot.footprint_radius_m;
        if self.safety_radius_m < floor {
            return Err(Error::InvalidParams {
                field: "safety_radius_m",
                reason: "must be at least twice the footprint radius",
            });
        }
        if self.stop_distance_m < floor {
            return Err(Error::InvalidParams {
                field: "stop_distance_m",
                reason: "must be at least twice the footprint radius",
            });
        }
        if !(self.repulsion_gain >= 0.0 && self.brake_gain_per_s > 0.0) {
            return Err(Error::InvalidParams {
                field: "repulsion_gain",
                reason: "gains must be >= 0 (brake gain > 0)",
            });
        }
        if !(self.convergence_tol_m > 0.0 && self.formation_tol_m > 0.0) {
            return Err(Error::InvalidParams {
                field: "convergence_tol_m",
                reason: "tolerances must be > 0",
            });
        }
        Ok(())
    }

    pub fn is_neighbor(&self, a: Vec2, b: Vec2) -> bool {
        match self.neighbor_graph {
            NeighborGraph::Complete => true,
            NeighborGraph::RadiusLimited { comm_radius_m } => a.distance(b) <= comm_radius_m,
        }
    }

    /// Rendezvous stop radius: every pair within `2·r_s + tol`.
    pub fn gather_distance_m(&self) -> f64 {
        2.0 * self.safety_radius_m + self.convergence_tol_m
    }
}

/// Target shape: per-robot offsets `ξ` in a formation frame.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FormationSpec {
    /// Offsets with their centroid removed.
    pub offsets: Vec<Vec2>,
    /// `assignment[i]` is the offset index of robot `i`.
    pub assignment: Vec<usize>,
}

impl FormationSpec {
    /// Identity assignment; offsets are shifted to zero centroid.
    pub fn new(offsets: Vec<Vec2>) -> Self {
        let assignment = (0..offsets.len()).collect();
        Self::with_assignment(offsets, assignment)
    }

    pub fn with_assignment(mut offsets: Vec<Vec2>, assignment: Vec<usize>) -> Self {
        let c = crate::geom::centroid(&offsets);
        for o in &mut offsets {
            *o -= c;
        }
        Self {
            offsets,
            assignment,
        }
    }

    /// Regular polygon with `n` vertices and the given side, centred at zero,
    /// first vertex on +x.
    pub fn regular_polygon(n: usize, side_m: f64) -> Self {
        let circumradius = side_m / (2.0 * libm::sin(PI / n as f64));
        let offsets = (0..n)
            .map(|k| Vec2::from_angle(2.0 * PI * k as f64 / n as f64) * circumradius)
            .collect();
        Self::new(offsets)
    }

    pub fn validate(&self, robot_count: usize) -> Result<()> {
        if self.offsets.len() != robot_count {
            return Err(Error::ShapeMismatch {
                expected: robot_count,
                got: self.offsets.len(),
            });
        }
        if self.assignment.len() != robot_count {
            return Err(Error::ShapeMismatch {
                expected: robot_count,
                got: self.assignment.len(),
            });
        }
        let mut seen = alloc::vec![false; robot_count];
        for &a in &self.assignment {
            if a >= robot_count || seen[a] {
                return Err(Error::InvalidInput(
                    "formation assignment must be a permutation",
                ));
            }
            seen[a] = true;
        }
        Ok(())
    }

    pub fn offset_of(&self, robot: usize) -> Vec2 {
        self.offsets[self.assignment[robot]]
    }

    /// Formation-frame coordinates `χ_i = x_i − ξ_i`.
    pub fn shifted(&self, positions: &[Vec2]) -> Result<Vec<Vec2>> {
        self.validate(positions.len())?;
        Ok(positions
            .iter()
            .enumerate()
            .map(|(i, x)| *x - self.offset_of(i))
            .collect())
    }

    /// Largest deviation of any `χ_i` from their mean; zero exactly when the
    /// robots sit on a translated copy of the shape.
    pub fn residual(&self, positions: &[Vec2]) -> Result<f64> {
        let chi = self.shifted(positions)?;
        let c = crate::geom::centroid(&chi);
        Ok(chi.iter().map(|p| p.distance(c)).fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GoToGoalParams {
    pub k_linear: f64,
    pub k_angular: f64,
    pub goal_tol_m: f64,
    /// Planar velocity commands slower than this become a zero twist.
    pub deadband_mps: f64,
}

impl Default for GoToGoalParams {
    fn default() -> Self {
        Self {
            k_linear: 1.0,
            k_angular: 4.0,
            goal_tol_m: 0.02,
            deadband_mps: 0.003,
        }
    }
}

fn heading_twist(
    pose: &Pose2D,
    direction: Vec2,
    speed: f64,
    params: &GoToGoalParams,
    robot: &RobotParams,
) -> Twist {
    let alpha = normalize_angle(direction.angle() - pose.theta_rad);
    let v = speed * libm::cos(alpha).max(0.0);
    saturate_twist(Twist::new(v, params.k_angular * alpha), robot)
}

/// Drives toward `goal`: turn rate proportional to the bearing error, forward
/// speed proportional to distance and shut off while the goal is behind.
pub fn position_controller(
    current: &Pose2D,
    goal: Vec2,
    params: &GoToGoalParams,
    robot: &RobotParams,
) -> Twist {
    if !goal.is_finite() {
        return Twist::ZERO;
    }
    let to_goal = goal - current.position();
    let distance = to_goal.norm();
    if distance < params.goal_tol_m {
        return Twist::ZERO;
    }
    heading_twist(current, to_goal, params.k_linear * distance, params, robot)
}

/// Turns a desired planar velocity into a twist with the same heading logic
/// as [`position_controller`], except that a direction within 45° of dead
/// astern always turns the robot left. Otherwise noise flips the bearing
/// error across ±π between updates and the robot spins on the spot.
pub fn planar_velocity_to_twist(
    pose: &Pose2D,
    velocity: Vec2,
    params: &GoToGoalParams,
    robot: &RobotParams,
) -> Twist {
    let speed = velocity.norm();
    if !(speed >= params.deadband_mps) {
        return Twist::ZERO;
    }
    let mut alpha = normalize_angle(velocity.angle() - pose.theta_rad);
    if alpha < -0.75 * PI {
        alpha += 2.0 * PI;
    }
    let v = speed * libm::cos(alpha).max(0.0);
    saturate_twist(Twist::new(v, params.k_angular * alpha), robot)
}

/// `ẋ_i = Σ_{j∈N_i} (x_j − x_i)`.
pub fn rendezvous_step(positions: &[Vec2], cfg: &SwarmConfig) -> Result<Vec<Vec2>> {
    if positions.len() < 2 {
        return Err(Error::DegenerateSwarm {
            count: positions.len(),
        });
    }
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut v = Vec2::ZERO;
            for (j, &xj) in positions.iter().enumerate() {
                if j != i && cfg.is_neighbor(xi, xj) {
                    v += xj - xi;
                }
            }
            v
        })
        .collect())
}

/// Every robot heads for the loudest robot in its neighbourhood (itself
/// included): `ẋ_i = x_max − x_i`. Ties go to the lowest index; an all-zero
/// intensity vector falls back to [`rendezvous_step`].
pub fn sound_rendezvous_step(
    positions: &[Vec2],
    intensities: &[f64],
    cfg: &SwarmConfig,
) -> Result<Vec<Vec2>> {
    if intensities.len() != positions.len() {
        return Err(Error::ShapeMismatch {
            expected: positions.len(),
            got: intensities.len(),
        });
    }
    if intensities.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("intensities must be finite"));
    }
    if intensities.iter().all(|&s| s == 0.0) {
        return rendezvous_step(positions, cfg);
    }
    if positions.len() < 2 {
        return Err(Error::DegenerateSwarm {
            count: positions.len(),
        });
    }
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let loudest = loudest_neighbor(i, positions, intensities, cfg);
            positions[loudest] - xi
        })
        .collect())
}

/// Index of the highest intensity among `i` and its neighbours.
pub fn loudest_neighbor(
    i: usize,
    positions: &[Vec2],
    intensities: &[f64],
    cfg: &SwarmConfig,
) -> usize {
    let mut best = i;
    for j in 0..positions.len() {
        if j != i && !cfg.is_neighbor(positions[i], positions[j]) {
            continue;
        }
        if intensities[j] > intensities[best] || (intensities[j] == intensities[best] && j < best) {
            best = j;
        }
    }
    best
}

/// Consensus on `χ_i = x_i − ξ_i`: `ẋ_i = Σ_{j∈N_i} (χ_j − χ_i)`.
pub fn formation_step(
    positions: &[Vec2],
    spec: &FormationSpec,
    cfg: &SwarmConfig,
) -> Result<Vec<Vec2>> {
    let chi = spec.shifted(positions)?;
    // Neighbourhoods are decided on the physical positions.
    if positions.len() < 2 {
        return Err(Error::DegenerateSwarm {
            count: positions.len(),
        });
    }
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut v = Vec2::ZERO;
            for (j, &xj) in positions.iter().enumerate() {
                if j != i && cfg.is_neighbor(xi, xj) {
                    v += chi[j] - chi[i];
                }
            }
            v
        })
        .collect())
}

/// Adds `k_rep·(r_s − d)` of repulsion along the line between every pair
/// closer than the safety radius. Coincident robots are split along ±x.
pub fn collision_avoidance(
    positions: &[Vec2],
    velocities: &[Vec2],
    cfg: &SwarmConfig,
) -> Result<Vec<Vec2>> {
    if velocities.len() != positions.len() {
        return Err(Error::ShapeMismatch {
            expected: positions.len(),
            got: velocities.len(),
        });
    }
    let mut out = velocities.to_vec();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let apart = positions[i] - positions[j];
            let d = apart.norm();
            if d >= cfg.safety_radius_m {
                continue;
            }
            let dir = apart.normalized().unwrap_or(Vec2::new(-1.0, 0.0));
            let push = dir * (cfg.repulsion_gain * (cfg.safety_radius_m - d));
            out[i] += push;
            out[j] -= push;
        }
    }
    Ok(out)
}

/// Caps the forward speed of robot `index` so that its approach speed toward
/// every other robot is at most `brake_gain·(d − stop_distance)`; rotation is
/// left alone since the robot turns about its centre.
pub fn stop_guard(
    index: usize,
    pose: &Pose2D,
    twist: Twist,
    positions: &[Vec2],
    cfg: &SwarmConfig,
) -> Twist {
    let here = pose.position();
    let heading = pose.heading();
    let mut v = twist.linear_mps;
    for (j, &other) in positions.iter().enumerate() {
        if j == index {
            continue;
        }
        let to_other = other - here;
        let d = to_other.norm();
        let Some(e) = to_other.normalized() else {
            continue;
        };
        let along = heading.dot(e);
        let approach = v * along;
        let cap = cfg.brake_gain_per_s * (d - cfg.stop_distance_m).max(0.0);
        if approach > cap {
            v = cap / along;
        }
    }
    Twist::new(v, twist.angular_radps)
}

/// Removes from robot `index`'s planar velocity whatever part approaches a
/// neighbour faster than `brake_gain·(d − stop_distance)`, keeping the
/// tangential part so a blocked robot slides around instead of stalling.
/// Motion away from every neighbour passes through unchanged.
pub fn constrain_approach(
    index: usize,
    positions: &[Vec2],
    velocity: Vec2,
    cfg: &SwarmConfig,
) -> Vec2 {
    let here = positions[index];
    let mut v = velocity;
    // A few sweeps settle the interaction between neighbouring constraints.
    for _ in 0..3 {
        let mut changed = false;
        for (j, &other) in positions.iter().enumerate() {
            if j == index {
                continue;
            }
            let to_other = other - here;
            let Some(n) = to_other.normalized() else {
                continue;
            };
            let cap = cfg.brake_gain_per_s * (to_other.norm() - cfg.stop_distance_m).max(0.0);
            let excess = v.dot(n) - cap;
            if excess > 0.0 {
                v -= n * excess;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    v
}

/// One discrete consensus update `x ← x + ε·ẋ`.
pub fn consensus_update(positions: &[Vec2], velocities: &[Vec2], gain_epsilon: f64) -> Vec<Vec2> {
    positions
        .iter()
        .zip(velocities)
        .map(|(x, v)| *x + *v * gain_epsilon)
        .collect()
}

/// Steps of `x ← x + ε·ẋ` on the complete graph of `n` robots needed to
/// shrink a spread of `spread_m` below `tol_m`. Every pairwise distance is
/// multiplied by `|1 − ε·n|` per step. `None` when the map does not contract.
pub fn contraction_step_bound(
    gain_epsilon: f64,
    n: usize,
    spread_m: f64,
    tol_m: f64,
) -> Option<u64> {
    let factor = (1.0 - gain_epsilon * n as f64).abs();
    if factor >= 1.0 {
        return None;
    }
    if spread_m < tol_m {
        return Some(0);
    }
    if factor == 0.0 {
        return Some(1);
    }
    Some(libm::ceil(libm::log(tol_m / spread_m) / libm::log(factor)) as u64)
}

/// Swarm law selected for an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum SwarmAlgorithm {
    Rendezvous,
    SoundRendezvous,
    Formation(FormationSpec),
}

impl SwarmAlgorithm {
    pub fn velocities(
        &self,
        positions: &[Vec2],
        intensities: &[f64],
        cfg: &SwarmConfig,
    ) -> Result<Vec<Vec2>> {
        match self {
            SwarmAlgorithm::Rendezvous => rendezvous_step(positions, cfg),
            SwarmAlgorithm::SoundRendezvous => sound_rendezvous_step(positions, intensities, cfg),
            SwarmAlgorithm::Formation(spec) => formation_step(positions, spec, cfg),
        }
    }
}
