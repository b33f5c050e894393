//! Overhead-camera server: periodic noisy global poses on `/global_position`
//! and the charging-station service on `charging/request`.

use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha8Rng;

use swarmtable_core::tracking::{
    assign_charging_station, observe_poses, release_charging_station, CameraNoiseParams,
    FrameCalibration, GlobalPoseReport,
};
use swarmtable_core::world::{ChargingStation, WorldState};
use swarmtable_core::{Pose2D, Vec2};

use crate::bus::{
    Bus, BusError, Payload, PoseEntry, Publisher, Responder, StationGrant, TopicPath,
};

pub struct TrackingServer {
    calibration: FrameCalibration,
    noise: CameraNoiseParams,
    rng: ChaCha8Rng,
    publisher: Publisher,
    period_s: f64,
    next_due_s: f64,
    stations: Arc<Mutex<Vec<ChargingStation>>>,
    _service: Responder,
}

impl std::fmt::Debug for TrackingServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrackingServer")
            .field("period_s", &self.period_s)
            .field("next_due_s", &self.next_due_s)
            .finish()
    }
}

/// Serves one charging exchange against the shared station table.
pub fn handle_charging(
    stations: &Mutex<Vec<ChargingStation>>,
    known_robots: &[String],
    body: &Payload,
) -> Result<Payload, String> {
    let mut stations = stations.lock().unwrap_or_else(|e| e.into_inner());
    match body {
        Payload::ChargingRequest { robot_id, x_m, y_m } => {
            let pose = Pose2D::new(*x_m, *y_m, 0.0);
            let grant = assign_charging_station(&mut stations, known_robots, robot_id, &pose)
                .map_err(|e| e.to_string())?;
            Ok(Payload::ChargingReply(grant.map(|s| StationGrant {
                station_id: s.id,
                x_m: s.position.x,
                y_m: s.position.y,
            })))
        }
        Payload::ChargingRelease { robot_id } => {
            release_charging_station(&mut stations, robot_id);
            Ok(Payload::ChargingReply(None))
        }
        other => Err(format!("unexpected `{}` body", other.kind())),
    }
}

impl TrackingServer {
    pub fn new(
        bus: &Bus,
        calibration: FrameCalibration,
        noise: CameraNoiseParams,
        rng: ChaCha8Rng,
        rate_hz: f64,
        stations: Vec<ChargingStation>,
        known_robots: Vec<String>,
    ) -> Result<Self, BusError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(BusError::InvalidRate(rate_hz));
        }
        let stations = Arc::new(Mutex::new(stations));
        let table = Arc::clone(&stations);
        let service = bus.serve(&TopicPath::charging_request(), move |body| {
            handle_charging(&table, &known_robots, body)
        })?;
        Ok(Self {
            calibration,
            noise,
            rng,
            publisher: bus.advertise(&TopicPath::global_position(), None)?,
            period_s: 1.0 / rate_hz,
            next_due_s: 0.0,
            stations,
            _service: service,
        })
    }

    /// Publishes a frame if one is due at the world's clock.
    pub fn poll(&mut self, world: &WorldState) -> Option<Vec<GlobalPoseReport>> {
        let now = world.sim_time_s;
        if now + 1e-9 < self.next_due_s {
            return None;
        }
        self.next_due_s += self.period_s;
        if self.next_due_s <= now + 1e-9 {
            self.next_due_s = now + self.period_s;
        }
        let reports = observe_poses(world, &self.calibration, &self.noise, &mut self.rng);
        self.publisher.publish(Payload::GlobalPositions(
            reports
                .iter()
                .map(|r| PoseEntry {
                    robot_id: r.robot_id.clone(),
                    x_m: r.pose.x_m,
                    y_m: r.pose.y_m,
                    theta_rad: r.pose.theta_rad,
                    stamp_s: r.stamp_s,
                })
                .collect(),
        ));
        Some(reports)
    }

    pub fn stations(&self) -> Vec<ChargingStation> {
        self.stations
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn station_position(&self, id: &str) -> Option<Vec2> {
        self.stations()
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.position)
    }
}

/// True when no station is held by two robots and no robot holds two.
pub fn stations_exclusive(stations: &[ChargingStation]) -> bool {
    let mut holders: Vec<&str> = stations
        .iter()
        .filter_map(|s| s.occupied_by.as_deref())
        .collect();
    let n = holders.len();
    holders.sort_unstable();
    holders.dedup();
    holders.len() == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use swarmtable_core::world::WorldParams;

    fn station(id: &str, x: f64) -> ChargingStation {
        ChargingStation {
            id: id.into(),
            position: Vec2::new(x, 0.1),
            occupied_by: None,
            charge_rate_w: 5.0,
        }
    }

    #[test]
    fn frames_follow_the_camera_rate() {
        let bus = Bus::new();
        let mut world = WorldState::new((2.5, 1.75), WorldParams::default(), 0);
        world.add_robot("r0", Pose2D::new(1.0, 1.0, 0.0)).unwrap();
        let mut server = TrackingServer::new(
            &bus,
            FrameCalibration::identity(),
            CameraNoiseParams::noiseless(),
            ChaCha8Rng::seed_from_u64(0),
            10.0,
            vec![],
            vec!["r0".into()],
        )
        .unwrap();
        let mut frames = 0;
        for k in 0..50 {
            world.sim_time_s = k as f64 * 0.02;
            if let Some(r) = server.poll(&world) {
                assert_eq!(r[0].pose, world.robots[0].pose);
                frames += 1;
            }
        }
        assert_eq!(frames, 10);
    }

    #[test]
    fn charging_service_over_the_bus() {
        let bus = Bus::new();
        let robots: Vec<String> = (0..3).map(|i| format!("r{i}")).collect();
        let server = TrackingServer::new(
            &bus,
            FrameCalibration::identity(),
            CameraNoiseParams::noiseless(),
            ChaCha8Rng::seed_from_u64(0),
            30.0,
            vec![station("a", 0.1), station("b", 2.0)],
            robots,
        )
        .unwrap();
        let svc = TopicPath::charging_request();
        let ask = |id: &str, x: f64| {
            bus.request(
                &svc,
                Payload::ChargingRequest {
                    robot_id: id.into(),
                    x_m: x,
                    y_m: 0.1,
                },
                0.1,
            )
            .unwrap()
        };
        let grant = |p: Payload| match p {
            Payload::ChargingReply(g) => g.map(|g| g.station_id),
            other => panic!("{other:?}"),
        };
        assert_eq!(grant(ask("r0", 0.0)), Some("a".into()));
        assert_eq!(grant(ask("r1", 0.0)), Some("b".into()));
        assert_eq!(grant(ask("r2", 0.0)), None);
        assert!(stations_exclusive(&server.stations()));
        bus.request(
            &svc,
            Payload::ChargingRelease {
                robot_id: "r0".into(),
            },
            0.1,
        )
        .unwrap();
        assert_eq!(grant(ask("r2", 0.0)), Some("a".into()));
        assert!(matches!(
            bus.request(
                &svc,
                Payload::ChargingRequest {
                    robot_id: "zz".into(),
                    x_m: 0.0,
                    y_m: 0.0
                },
                0.1
            ),
            Err(BusError::Remote { .. })
        ));
    }
}
