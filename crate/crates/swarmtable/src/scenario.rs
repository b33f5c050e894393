//! Scenario files: a TOML (or JSON) document whose every key has a default.
//!
//! Unknown keys are rejected. `--set a.b.c=value` overrides are applied to
//! the parsed document before it is turned into a [`Scenario`], so they go
//! through exactly the same checks as keys written in the file.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use swarmtable_core::controllers::{GoToGoalParams, SwarmConfig};
use swarmtable_core::motor::{MotorPlantParams, PidGains};
use swarmtable_core::tracking::CameraNoiseParams;
use swarmtable_core::world::{EncoderNoiseParams, PowerParams, SoundModelParams, SoundSource};
use swarmtable_core::{normalize_angle, Pose2D, RobotParams, Vec2};

use crate::executor::PositionSource;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Rendezvous,
    SoundRendezvous,
    Formation,
    /// Every robot replays `script` open loop.
    Script,
    /// No swarm controller; robots only react to the charging lifecycle.
    Idle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rendezvous => "rendezvous",
            Algorithm::SoundRendezvous => "sound_rendezvous",
            Algorithm::Formation => "formation",
            Algorithm::Script => "script",
            Algorithm::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomTag {
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialPoses {
    Random(RandomTag),
    /// `[x, y, theta]` per robot.
    Explicit(Vec<[f64; 3]>),
}

impl Default for InitialPoses {
    fn default() -> Self {
        InitialPoses::Random(RandomTag::Random)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotsConfig {
    /// Defaults to the number of explicit poses, else 5.
    pub count: Option<usize>,
    /// Defaults to `r0, r1, ...`.
    pub ids: Vec<String>,
    pub initial: InitialPoses,
    /// Random starts keep at least this far apart (never less than two
    /// footprints).
    pub min_separation_m: f64,
    /// Random starts keep this clearance from the table edge.
    pub edge_margin_m: f64,
    pub initial_battery_fraction: f64,
}

impl Default for RobotsConfig {
    fn default() -> Self {
        Self {
            count: None,
            ids: Vec::new(),
            initial: InitialPoses::default(),
            min_separation_m: 0.25,
            edge_margin_m: 0.15,
            initial_battery_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub camera: CameraNoiseParams,
    pub encoder: EncoderNoiseParams,
    /// Report whole encoder ticks. Off means odometry sees the exact wheel
    /// rotation, which is what a noise-free run needs.
    pub quantize_ticks: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            camera: CameraNoiseParams::default(),
            encoder: EncoderNoiseParams::default(),
            quantize_ticks: true,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            camera: CameraNoiseParams::noiseless(),
            encoder: EncoderNoiseParams::none(),
            quantize_ticks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationConfig {
    /// Side of the regular polygon used when `offsets` is empty.
    pub side_m: f64,
    /// Explicit `[x, y]` offsets, one per robot.
    pub offsets: Vec<[f64; 2]>,
    /// Pick the robot-to-vertex assignment that minimizes travel.
    pub optimal_assignment: bool,
}

impl Default for FormationConfig {
    fn default() -> Self {
        Self {
            side_m: 0.25,
            offsets: Vec::new(),
            optimal_assignment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoundConfig {
    pub model: SoundModelParams,
    pub sources: Vec<SoundSourceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoundSourceConfig {
    pub position: [f64; 2],
    pub power_w: f64,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

impl SoundSourceConfig {
    pub fn to_source(&self) -> SoundSource {
        SoundSource {
            position: Vec2::new(self.position[0], self.position[1]),
            power_w: self.power_w,
            active: self.active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub id: String,
    pub position: [f64; 2],
    #[serde(default = "default_charge_rate")]
    pub charge_rate_w: f64,
}

fn default_charge_rate() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargingConfig {
    pub stations: Vec<StationConfig>,
    /// Battery fraction below which a robot asks for a station.
    pub low_fraction: f64,
    /// Battery fraction at which a charging robot rejoins the swarm.
    pub resume_fraction: f64,
    /// Centre distance to the station that counts as docked.
    pub dock_tol_m: f64,
    /// Wait before a denied robot asks again.
    pub retry_s: f64,
    pub request_timeout_s: f64,
}

impl Default for ChargingConfig {
    fn default() -> Self {
        Self {
            stations: Vec::new(),
            low_fraction: 0.2,
            resume_fraction: 0.95,
            dock_tol_m: 0.03,
            retry_s: 1.0,
            request_timeout_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub control_hz: f64,
    pub camera_hz: f64,
    pub odom_hz: f64,
    pub battery_hz: f64,
    pub sound_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            control_hz: 10.0,
            camera_hz: 30.0,
            odom_hz: 50.0,
            battery_hz: 1.0,
            sound_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub position_source: PositionSource,
    /// Position data older than this makes the executor skip a tick.
    pub staleness_s: f64,
    /// Control ticks averaged for the convergence test.
    pub smoothing_window: usize,
    /// Sound rendezvous is done when every robot is this close to the
    /// loudest one.
    pub gather_radius_m: f64,
    /// Robots stop when no command arrives for this long.
    pub command_timeout_s: f64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            position_source: PositionSource::Camera,
            staleness_s: 0.2,
            smoothing_window: 5,
            gather_radius_m: 0.14,
            command_timeout_s: 0.5,
        }
    }
}

/// Camera markers in raw sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub origin: [f64; 2],
    pub x_axis: [f64; 2],
    pub y_axis: [f64; 2],
    pub marker_spacing_m: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0],
            x_axis: [1.0, 0.0],
            y_axis: [0.0, 1.0],
            marker_spacing_m: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSegment {
    pub duration_s: f64,
    pub v_mps: f64,
    pub w_radps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub dt_s: f64,
    pub duration_s: f64,
    pub table_size_m: [f64; 2],
    pub algorithm: Algorithm,
    /// Stop the run once the swarm controller reports convergence.
    pub stop_on_convergence: bool,
    pub robots: RobotsConfig,
    pub robot: RobotParams,
    pub pid: PidGains,
    pub plant: MotorPlantParams,
    pub power: PowerParams,
    pub noise: NoiseConfig,
    pub swarm: SwarmConfig,
    pub go_to_goal: GoToGoalParams,
    pub formation: FormationConfig,
    pub sound: SoundConfig,
    pub charging: ChargingConfig,
    pub rates: Rates,
    pub executor: ExecutorConfig,
    pub frame: FrameConfig,
    pub script: Vec<ScriptSegment>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            seed: 0,
            dt_s: 0.02,
            duration_s: 120.0,
            table_size_m: [2.5, 1.75],
            algorithm: Algorithm::default(),
            stop_on_convergence: true,
            robots: RobotsConfig::default(),
            robot: RobotParams::default(),
            pid: PidGains::default(),
            plant: MotorPlantParams::default(),
            power: PowerParams::default(),
            noise: NoiseConfig::default(),
            swarm: SwarmConfig::default(),
            go_to_goal: GoToGoalParams::default(),
            formation: FormationConfig::default(),
            sound: SoundConfig::default(),
            charging: ChargingConfig::default(),
            rates: Rates::default(),
            executor: ExecutorConfig::default(),
            frame: FrameConfig::default(),
            script: Vec::new(),
        }
    }
}

/// Parses `key=value`; the value is read as a TOML value and falls back to a
/// bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_owned()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.to_owned()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    Ok((key.to_owned(), value))
}

pub fn apply_override(
    doc: &mut toml::Table,
    key: &str,
    value: toml::Value,
) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = doc;
    let mut walked = String::new();
    for part in parts {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        let entry = table
            .entry(part.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(walked.clone(), "is not a table"))?;
    }
    table.insert(last.to_owned(), value);
    Ok(())
}

impl Scenario {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let doc: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_document(doc, overrides)
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let doc: toml::Table =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_document(doc, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text, overrides)
        } else {
            Self::from_toml_str(&text, overrides)
        }
    }

    fn from_document(mut doc: toml::Table, overrides: &[String]) -> Result<Self, ConfigError> {
        for spec in overrides {
            let (key, value) = parse_override(spec)?;
            apply_override(&mut doc, &key, value)?;
        }
        let scenario: Scenario = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn robot_count(&self) -> usize {
        match (&self.robots.initial, self.robots.count) {
            (_, Some(n)) => n,
            (InitialPoses::Explicit(p), None) => p.len(),
            (InitialPoses::Random(_), None) if !self.robots.ids.is_empty() => self.robots.ids.len(),
            _ => 5,
        }
    }

    pub fn robot_ids(&self) -> Vec<String> {
        if self.robots.ids.is_empty() {
            (0..self.robot_count()).map(|i| format!("r{i}")).collect()
        } else {
            self.robots.ids.clone()
        }
    }

    /// Copy with every defaulted value spelled out.
    pub fn resolved(&self) -> Self {
        let mut s = self.clone();
        s.robots.count = Some(self.robot_count());
        s.robots.ids = self.robot_ids();
        s
    }

    pub fn max_steps(&self) -> u64 {
        (self.duration_s / self.dt_s + 1e-9).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be finite and > 0 (got {x})")))
            }
        };
        positive("dt_s", self.dt_s)?;
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s", "must be finite and >= 0"));
        }
        positive("table_size_m[0]", self.table_size_m[0])?;
        positive("table_size_m[1]", self.table_size_m[1])?;
        let core = |field: &str, r: swarmtable_core::Result<()>| {
            r.map_err(|e| invalid(field, e.to_string()))
        };
        core("robot", self.robot.validate())?;
        core("pid", self.pid.validate())?;
        core("power", self.power.validate())?;
        positive("plant.time_constant_s", self.plant.time_constant_s)?;
        positive(
            "plant.max_wheel_speed_radps",
            self.plant.max_wheel_speed_radps,
        )?;
        for (name, r) in [
            ("rates.control_hz", self.rates.control_hz),
            ("rates.camera_hz", self.rates.camera_hz),
            ("rates.odom_hz", self.rates.odom_hz),
            ("rates.battery_hz", self.rates.battery_hz),
            ("rates.sound_hz", self.rates.sound_hz),
        ] {
            positive(name, r)?;
        }
        positive("executor.staleness_s", self.executor.staleness_s)?;
        positive("executor.gather_radius_m", self.executor.gather_radius_m)?;
        positive(
            "executor.command_timeout_s",
            self.executor.command_timeout_s,
        )?;
        if self.executor.smoothing_window == 0 {
            return Err(invalid("executor.smoothing_window", "must be >= 1"));
        }
        let cam = &self.noise.camera;
        if !(cam.position_sigma_m >= 0.0 && cam.heading_sigma_rad >= 0.0) {
            return Err(invalid("noise.camera", "sigmas must be >= 0"));
        }
        if !(0.0..1.0).contains(&cam.drop_probability) {
            return Err(invalid(
                "noise.camera.drop_probability",
                "must be in [0, 1)",
            ));
        }
        let enc = &self.noise.encoder;
        if !(enc.scale_sigma >= 0.0 && enc.jitter_sigma_ticks >= 0.0) {
            return Err(invalid("noise.encoder", "sigmas must be >= 0"));
        }

        let n = self.robot_count();
        let ids = self.robot_ids();
        if ids.len() != n {
            return Err(invalid(
                "robots.ids",
                format!("{} ids for {n} robots", ids.len()),
            ));
        }
        for (i, id) in ids.iter().enumerate() {
            if crate::bus::TopicPath::new(id, "odom").is_err() {
                return Err(invalid(
                    format!("robots.ids[{i}]"),
                    format!("`{id}` must be non-empty [a-z0-9_]"),
                ));
            }
            if ids[..i].contains(id) {
                return Err(invalid(
                    format!("robots.ids[{i}]"),
                    format!("duplicate id `{id}`"),
                ));
            }
        }
        let f = &self.robots.initial_battery_fraction;
        if !(0.0..=1.0).contains(f) {
            return Err(invalid(
                "robots.initial_battery_fraction",
                "must be in [0, 1]",
            ));
        }
        let uses_swarm = matches!(
            self.algorithm,
            Algorithm::Rendezvous | Algorithm::SoundRendezvous | Algorithm::Formation
        );
        if uses_swarm {
            if n < 2 {
                return Err(invalid(
                    "robots.count",
                    "swarm algorithms need at least 2 robots",
                ));
            }
            core("swarm", self.swarm.validate(n, &self.robot))?;
        }
        if self.algorithm == Algorithm::Formation
            && !self.formation.offsets.is_empty()
            && self.formation.offsets.len() != n
        {
            return Err(invalid(
                "formation.offsets",
                format!("{} offsets for {n} robots", self.formation.offsets.len()),
            ));
        }
        if self.algorithm == Algorithm::Formation && self.formation.offsets.is_empty() {
            positive("formation.side_m", self.formation.side_m)?;
        }
        for (i, seg) in self.script.iter().enumerate() {
            if !(seg.duration_s >= 0.0 && seg.v_mps.is_finite() && seg.w_radps.is_finite()) {
                return Err(invalid(
                    format!("script[{i}]"),
                    "needs duration >= 0 and finite speeds",
                ));
            }
        }
        for (i, src) in self.sound.sources.iter().enumerate() {
            if !(src.power_w >= 0.0 && src.position.iter().all(|c| c.is_finite())) {
                return Err(invalid(
                    format!("sound.sources[{i}]"),
                    "needs finite position and power >= 0",
                ));
            }
        }
        let ch = &self.charging;
        if !(0.0..=1.0).contains(&ch.low_fraction)
            || !(ch.low_fraction < ch.resume_fraction && ch.resume_fraction <= 1.0)
        {
            return Err(invalid(
                "charging",
                "need 0 <= low_fraction < resume_fraction <= 1",
            ));
        }
        positive("charging.dock_tol_m", ch.dock_tol_m)?;
        positive("charging.retry_s", ch.retry_s)?;
        positive("charging.request_timeout_s", ch.request_timeout_s)?;
        for (i, st) in ch.stations.iter().enumerate() {
            if ch.stations[..i].iter().any(|s| s.id == st.id) {
                return Err(invalid(
                    format!("charging.stations[{i}]"),
                    format!("duplicate id `{}`", st.id),
                ));
            }
            if !(st.charge_rate_w > 0.0) {
                return Err(invalid(
                    format!("charging.stations[{i}].charge_rate_w"),
                    "must be > 0",
                ));
            }
        }

        let (lo, hi) = self.center_bounds();
        if let InitialPoses::Explicit(poses) = &self.robots.initial {
            if poses.len() != n {
                return Err(invalid(
                    "robots.initial",
                    format!("{} poses for {n} robots", poses.len()),
                ));
            }
            for (i, p) in poses.iter().enumerate() {
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(invalid(
                        format!("robots.initial[{i}]"),
                        format!("robot {} has a non-finite pose", ids[i]),
                    ));
                }
                if p[0] < lo.x || p[0] > hi.x || p[1] < lo.y || p[1] > hi.y {
                    return Err(invalid(
                        format!("robots.initial[{i}]"),
                        format!(
                            "robot {} at ({}, {}) is outside the table area [{}, {}] x [{}, {}]",
                            ids[i], p[0], p[1], lo.x, hi.x, lo.y, hi.y
                        ),
                    ));
                }
            }
            let floor = 2.0 * self.robot.footprint_radius_m;
            for i in 0..n {
                for j in i + 1..n {
                    let d = (poses[i][0] - poses[j][0]).hypot(poses[i][1] - poses[j][1]);
                    if d < floor {
                        return Err(invalid(
                            "robots.initial",
                            format!(
                                "robots {} and {} start {d} m apart, closer than {floor} m",
                                ids[i], ids[j]
                            ),
                        ));
                    }
                }
            }
        } else {
            let margin = self.robots.edge_margin_m;
            if !(margin >= 0.0) || lo.x + margin >= hi.x - margin || lo.y + margin >= hi.y - margin
            {
                return Err(invalid(
                    "robots.edge_margin_m",
                    "leaves no room on the table",
                ));
            }
        }
        Ok(())
    }

    /// Region a robot centre may occupy.
    pub fn center_bounds(&self) -> (Vec2, Vec2) {
        let m = self.robot.footprint_radius_m;
        (
            Vec2::new(m, m),
            Vec2::new(self.table_size_m[0] - m, self.table_size_m[1] - m),
        )
    }

    /// Starting poses: the explicit list, or rejection samples honouring the
    /// separation and edge margin.
    pub fn initial_poses(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Pose2D>, ConfigError> {
        match &self.robots.initial {
            InitialPoses::Explicit(p) => {
                Ok(p.iter().map(|q| Pose2D::new(q[0], q[1], q[2])).collect())
            }
            InitialPoses::Random(_) => {
                let n = self.robot_count();
                let sep = self
                    .robots
                    .min_separation_m
                    .max(2.0 * self.robot.footprint_radius_m);
                let (lo, hi) = self.center_bounds();
                let m = self.robots.edge_margin_m;
                let mut poses: Vec<Pose2D> = Vec::with_capacity(n);
                let mut attempts = 0u32;
                while poses.len() < n {
                    attempts += 1;
                    if attempts > 100_000 {
                        return Err(invalid(
                            "robots.min_separation_m",
                            format!("could not place {n} robots that far apart"),
                        ));
                    }
                    let x = rng.random_range(lo.x + m..hi.x - m);
                    let y = rng.random_range(lo.y + m..hi.y - m);
                    let theta = normalize_angle(
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    );
                    let p = Vec2::new(x, y);
                    if poses.iter().all(|q| q.position().distance(p) >= sep) {
                        poses.push(Pose2D::new(x, y, theta));
                    }
                }
                Ok(poses)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn empty_file_is_all_defaults() {
        let s = Scenario::from_toml_str("", &[]).unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.robot_ids(), ["r0", "r1", "r2", "r3", "r4"]);
        assert_eq!(s.max_steps(), 6000);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let s = Scenario::from_toml_str(
            "seed = 1\n[swarm]\ngain_epsilon = 0.1\n",
            &[
                "seed=42".into(),
                "swarm.safety_radius_m=0.15".into(),
                "algorithm=formation".into(),
                "noise.encoder.scale_sigma = 0".into(),
            ],
        )
        .unwrap();
        assert_eq!(s.seed, 42);
        assert_eq!(s.swarm.gain_epsilon, 0.1);
        assert_eq!(s.swarm.safety_radius_m, 0.15);
        assert_eq!(s.algorithm, Algorithm::Formation);
        assert_eq!(s.noise.encoder.scale_sigma, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_toml_str("[swarm]\ngain = 0.1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("gain"), "{err}");
        assert!(Scenario::from_toml_str("bogus = 1", &[]).is_err());
        assert!(Scenario::from_toml_str("", &["nokey".into()]).is_err());
    }

    #[test]
    fn robot_outside_table_is_named() {
        let text = "[robots]\ninitial = [[0.5, 0.5, 0.0], [3.0, 0.5, 0.0]]\n";
        let err = Scenario::from_toml_str(text, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("robots.initial[1]") && msg.contains("robot r1"),
            "{msg}"
        );
    }

    #[test]
    fn unstable_gain_is_rejected() {
        let err = Scenario::from_toml_str("", &["swarm.gain_epsilon=0.3".into()]).unwrap_err();
        assert!(err.to_string().starts_with("swarm:"), "{err}");
    }

    #[test]
    fn explicit_poses_set_the_count() {
        let s = Scenario::from_toml_str(
            "[robots]\ninitial = [[0.5, 0.5, 0.0], [1.0, 0.5, 0.0]]\n",
            &[],
        )
        .unwrap();
        assert_eq!(s.robot_count(), 2);
        assert_eq!(s.resolved().robots.count, Some(2));
    }

    #[test]
    fn random_poses_respect_bounds_and_spacing() {
        let s = Scenario::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let poses = s.initial_poses(&mut rng).unwrap();
            assert_eq!(poses.len(), 5);
            for (i, p) in poses.iter().enumerate() {
                assert!(p.x_m >= 0.2 && p.x_m <= 2.3 && p.y_m >= 0.2 && p.y_m <= 1.55);
                for q in &poses[i + 1..] {
                    assert!(p.position().distance(q.position()) >= 0.25);
                }
            }
        }
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let s = Scenario::from_toml_str("algorithm = \"sound_rendezvous\"\n[[sound.sources]]\nposition = [2.2, 0.9]\npower_w = 1.0\n", &[]).unwrap();
        let json = serde_json::to_string_pretty(&s.resolved()).unwrap();
        let back = Scenario::from_json_str(&json, &[]).unwrap();
        assert_eq!(back, s.resolved());
    }
}
