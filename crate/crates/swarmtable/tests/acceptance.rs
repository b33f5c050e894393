//! Acceptance criteria 1 to 12. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the harness capture) and then asserts the verdict.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmtable::bus::{Bus, Payload, TopicPath};
use swarmtable::metrics::formation_error;
use swarmtable::runner::{run_to_dir, simulate, StopReason, SUMMARY_FILE, TRAJECTORY_FILE};
use swarmtable::scenario::Scenario;
use swarmtable::trajectory::TrajectoryRecord;
use swarmtable_core::controllers::{
    consensus_update, rendezvous_step, sound_rendezvous_step, SwarmConfig,
};
use swarmtable_core::geom::{centroid, max_pairwise_distance, min_pairwise_distance};
use swarmtable_core::kinematics::{forward_kinematics, inverse_kinematics, saturate_twist};
use swarmtable_core::odometry::{
    closed_form_arc, tick_split, update_odometry_from_deltas, OdometryEstimate,
};
use swarmtable_core::tracking::{
    observe_poses, CameraNoiseParams, FrameCalibration, DEFAULT_CAMERA_SIGMA_M,
};
use swarmtable_core::world::{battery_step, PowerParams, RobotTruth, WorldParams, WorldState};
use swarmtable_core::{normalize_angle, Pose2D, RobotParams, Twist, Vec2};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[{tag}] criterion {id:>2} {name}: {detail}"
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn scenario(file: &str, overrides: &[String]) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(file);
    Scenario::load(&path, overrides).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn seeded(file: &str, seed: u64) -> Scenario {
    scenario(file, &[format!("seed={seed}")])
}

fn xy(p: &[f64; 3]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

/// Records grouped by step, robots in log order.
fn by_step(records: &[TrajectoryRecord]) -> Vec<Vec<&TrajectoryRecord>> {
    let mut steps: BTreeMap<u64, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        steps.entry(r.step).or_default().push(r);
    }
    steps.into_values().collect()
}

fn truth_positions(step: &[&TrajectoryRecord]) -> Vec<Vec2> {
    step.iter().map(|r| xy(&r.truth)).collect()
}

#[test]
fn criterion_01_kinematics_round_trip() {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let raw = Twist::new(rng.random_range(-0.3..0.3), rng.random_range(-10.0..10.0));
        let t = saturate_twist(raw, &p);
        let back = forward_kinematics(inverse_kinematics(t, &p).unwrap(), &p).unwrap();
        let rel = |a: f64, b: f64| {
            if b == 0.0 {
                a.abs()
            } else {
                ((a - b) / b).abs()
            }
        };
        worst = worst
            .max(rel(back.linear_mps, t.linear_mps))
            .max(rel(back.angular_radps, t.angular_radps));
    }
    let took = start.elapsed();
    verdict(
        1,
        "kinematics round trip",
        worst < 1e-12 && took < Duration::from_secs(1),
        format!("worst relative error {worst:.3e} over 1e4 twists in {took:.2?}"),
    );
}

#[test]
fn criterion_02_exact_arc_odometry() {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let (mut worst_m, mut worst_rad) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let cmd = saturate_twist(
            Twist::new(rng.random_range(-0.28..0.28), rng.random_range(-8.0..8.0)),
            &p,
        );
        // Whole multiples of 0.1 s so every dt divides the segment.
        let tenths: u32 = rng.random_range(1..=50);
        let t = f64::from(tenths) * 0.1;
        let origin = Pose2D::new(
            rng.random_range(0.0..2.5),
            rng.random_range(0.0..1.75),
            rng.random_range(-PI..PI),
        );
        let want = closed_form_arc(origin, cmd.linear_mps, cmd.angular_radps, t);
        for dt in [0.001, 0.02, 0.1] {
            let n = (t / dt).round() as usize;
            let (dl, dr) = tick_split(cmd, dt, &p).unwrap();
            let mut est = OdometryEstimate::at(origin, 0.0);
            for _ in 0..n {
                est = update_odometry_from_deltas(&est, dl, dr, dt, &p).unwrap();
            }
            worst_m = worst_m.max(est.pose.position().distance(want.position()));
            worst_rad = worst_rad.max(normalize_angle(est.pose.theta_rad - want.theta_rad).abs());
        }
    }
    let took = start.elapsed();
    verdict(
        2,
        "exact-arc odometry",
        worst_m < 1e-9 && worst_rad < 1e-9 && took < Duration::from_secs(5),
        format!(
            "worst {worst_m:.3e} m / {worst_rad:.3e} rad over 100 segments x 3 dt in {took:.2?}"
        ),
    );
}

#[test]
fn criterion_03_noise_free_consistency() {
    let s = scenario("noise_free.toml", &[]);
    let (records, info, _) = simulate(&s).unwrap();
    let worst = records
        .iter()
        .map(|r| xy(&r.odom).distance(xy(&r.truth)))
        .fold(0.0, f64::max);
    verdict(
        3,
        "noise-free consistency",
        worst < 1e-6 && info.steps > 0 && s.robot_count() == 5,
        format!(
            "worst odometry-vs-truth {worst:.3e} m over {} steps of 5 robots",
            info.steps
        ),
    );
}

#[test]
fn criterion_04_camera_noise_calibration() {
    let start = Instant::now();
    let mut world = WorldState::new((2.5, 1.75), WorldParams::default(), 4);
    for k in 0..5 {
        world
            .add_robot(
                format!("r{k}"),
                Pose2D::new(0.3 + 0.4 * k as f64, 0.5 + 0.15 * k as f64, 0.3 * k as f64),
            )
            .unwrap();
    }
    let noise = CameraNoiseParams::default();
    let cal = FrameCalibration::identity();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut errors = Vec::with_capacity(10_000);
    while errors.len() < 10_000 {
        for rep in observe_poses(&world, &cal, &noise, &mut rng) {
            let truth = world.robot(&rep.robot_id).unwrap().pose.position();
            errors.push(rep.pose.position().distance(truth));
        }
    }
    errors.truncate(10_000);
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let took = start.elapsed();
    verdict(
        4,
        "camera noise calibration",
        noise.position_sigma_m == DEFAULT_CAMERA_SIGMA_M
            && (mean - 0.008).abs() <= 0.05 * 0.008
            && took < Duration::from_secs(5),
        format!("mean radial error {mean:.5} m (target 0.008 +/- 5%) in {took:.2?}"),
    );
}

#[test]
fn criterion_05_odometry_error_bracket() {
    let start = Instant::now();
    let mut per_seed = Vec::new();
    let mut path_m = 0.0;
    for seed in 1..=100 {
        let (records, _, _) = simulate(&seeded("calibration.toml", seed)).unwrap();
        let errs: Vec<f64> = records
            .iter()
            .map(|r| xy(&r.odom).distance(xy(&r.truth)))
            .collect();
        per_seed.push(errs.iter().sum::<f64>() / errs.len() as f64);
        if seed == 1 {
            path_m = records
                .windows(2)
                .map(|w| xy(&w[0].truth).distance(xy(&w[1].truth)))
                .sum();
        }
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let took = start.elapsed();
    verdict(
        5,
        "odometry error bracket",
        (0.03..=0.13).contains(&mean)
            && (4.9..=5.1).contains(&path_m)
            && took < Duration::from_secs(60),
        format!(
            "mean |odom - truth| {mean:.4} m over 100 seeds on a {path_m:.2} m path in {took:.2?}"
        ),
    );
}

/// One robot replaying `segments` open loop from `start`.
fn script_scenario(start: [f64; 3], segments: &[(f64, f64, f64)]) -> Scenario {
    let mut text = format!(
        "name = \"script\"\nalgorithm = \"script\"\nduration_s = {}\n[robots]\ncount = 1\ninitial = [[{}, {}, {}]]\n",
        segments.iter().map(|s| s.0).sum::<f64>(),
        start[0],
        start[1],
        start[2]
    );
    for (d, v, w) in segments {
        text += &format!("[[script]]\nduration_s = {d}\nv_mps = {v}\nw_radps = {w}\n");
    }
    Scenario::from_toml_str(&text, &[]).unwrap()
}

#[test]
fn criterion_06_speed_clamp() {
    let s = script_scenario([0.3, 0.875, 0.0], &[(4.0, 0.5, 0.0), (2.0, 0.5, 1.5)]);
    let (records, info, _) = simulate(&s).unwrap();
    let dt = s.dt_s;
    let fastest = records
        .windows(2)
        .map(|w| xy(&w[0].truth).distance(xy(&w[1].truth)) / dt)
        .fold(0.0, f64::max);
    let commanded = s.script.iter().map(|g| g.v_mps).fold(0.0, f64::max);
    // The log holds the command after the robot's own saturation.
    let logged = records.iter().map(|r| r.cmd[0]).fold(0.0, f64::max);
    verdict(
        6,
        "speed clamp",
        fastest <= 0.28 && commanded == 0.5 && info.boundary_contacts == 0,
        format!("commanded {commanded} m/s (logged {logged} after saturation), fastest true speed {fastest:.6} m/s"),
    );
}

#[test]
fn criterion_07_velocity_tracking() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut segments = Vec::new();
    for k in 0..10 {
        // Alternate direction so the robot stays near the middle of the table.
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        segments.push((
            3.0,
            sign * rng.random_range(0.05..0.25),
            rng.random_range(-1.0..1.0),
        ));
    }
    let s = script_scenario([1.25, 0.875, 0.0], &segments);
    let (records, info, _) = simulate(&s).unwrap();
    let dt = s.dt_s;
    let mut errors = Vec::new();
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mid = a.truth[2] + 0.5 * normalize_angle(b.truth[2] - a.truth[2]);
        let body_speed = (xy(&b.truth) - xy(&a.truth)).dot(Vec2::from_angle(mid)) / dt;
        errors.push((body_speed - a.cmd[0]).abs());
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    verdict(
        7,
        "velocity tracking",
        mean < 0.04 && info.boundary_contacts == 0,
        format!("mean |v_true - v_cmd| {mean:.4} m/s over 10 setpoints x 3 s"),
    );
}

#[test]
fn criterion_08_rendezvous_properties() {
    let start = Instant::now();
    // (a) Pure consensus, avoidance off.
    let mut drift = 0.0f64;
    let mut grew = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 1..=20u64 {
        let s = seeded("rendezvous.toml", seed);
        let mut x: Vec<Vec2> = s
            .initial_poses(&mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .iter()
            .map(Pose2D::position)
            .collect();
        let n = x.len();
        let eps = rng.random_range(0.01..0.99) / (n - 1) as f64;
        let cfg = SwarmConfig {
            gain_epsilon: eps,
            ..s.swarm
        };
        for _ in 0..100 {
            let next = consensus_update(&x, &rendezvous_step(&x, &cfg).unwrap(), eps);
            drift = drift.max(centroid(&next).distance(centroid(&x)));
            if max_pairwise_distance(&next) > max_pairwise_distance(&x) {
                grew += 1;
            }
            x = next;
        }
    }
    // (b) Full simulation with avoidance.
    let mut worst_final = 0.0f64;
    let mut closest = f64::INFINITY;
    let mut unconverged = 0;
    let mut limit = 0.0;
    for seed in 1..=20 {
        let s = seeded("rendezvous.toml", seed);
        limit = s.swarm.gather_distance_m();
        let floor = 2.0 * s.robot.footprint_radius_m;
        let (records, info, _) = simulate(&s).unwrap();
        let steps = by_step(&records);
        for step in &steps {
            closest = closest.min(min_pairwise_distance(&truth_positions(step)) / floor);
        }
        worst_final = worst_final.max(max_pairwise_distance(&truth_positions(
            steps.last().unwrap(),
        )));
        if info.stop_reason != StopReason::Converged || info.steps > s.max_steps() {
            unconverged += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        8,
        "rendezvous properties",
        drift < 1e-9
            && grew == 0
            && unconverged == 0
            && worst_final <= limit
            && closest >= 1.0
            && took < Duration::from_secs(60),
        format!(
            "centroid drift {drift:.2e} m, spread increases {grew}; with avoidance: {unconverged} unconverged, \
             worst final spread {worst_final:.4} m (limit {limit:.2}), closest approach {closest:.3} x floor, {took:.2?}"
        ),
    );
}

#[test]
fn criterion_09_formation() {
    let mut worst_side = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 1..=20 {
        let s = seeded("formation.toml", seed);
        let (records, _, sim) = simulate(&s).unwrap();
        let offsets: Vec<Vec2> = sim
            .header()
            .formation_offsets
            .expect("formation header")
            .iter()
            .map(|o| Vec2::new(o[0], o[1]))
            .collect();
        let steps = by_step(&records);
        let x = truth_positions(steps.last().unwrap());
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                if (offsets[i].distance(offsets[j]) - 0.25).abs() < 1e-9 {
                    worst_side = worst_side.max((x[i].distance(x[j]) - 0.25).abs());
                }
            }
        }
        // Recovered translation: the mean of x_i − ξ_i.
        let chi: Vec<Vec2> = x.iter().zip(&offsets).map(|(p, o)| *p - *o).collect();
        let c = centroid(&chi);
        worst_residual = worst_residual.max(chi.iter().map(|q| q.distance(c)).fold(0.0, f64::max));
        let base = formation_error(&x, &offsets);
        let moved: Vec<Vec2> = x.iter().map(|p| *p - c).collect();
        let far = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let elsewhere: Vec<Vec2> = x.iter().map(|p| *p + far).collect();
        worst_shift = worst_shift
            .max((formation_error(&moved, &offsets) - base).abs())
            .max((formation_error(&elsewhere, &offsets) - base).abs());
    }
    verdict(
        9,
        "pentagon formation",
        worst_side <= 0.01 && worst_residual <= 0.01 && worst_shift < 1e-12,
        format!(
            "worst side error {worst_side:.4} m, worst offset residual {worst_residual:.4} m, \
             translation change in error {worst_shift:.1e} over 20 seeds"
        ),
    );
}

#[test]
fn criterion_10_sound_rendezvous() {
    let mut worst = 0.0f64;
    let mut variant = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in 1..=20 {
        let s = seeded("sound.toml", seed);
        assert_eq!(s.sound.model.lobe_exponent, 0.0, "isotropic microphones");
        assert_eq!(s.sound.sources.len(), 1);
        let (records, _, _) = simulate(&s).unwrap();
        let steps = by_step(&records);
        let last = steps.last().unwrap();
        let x = truth_positions(last);
        let loudness: Vec<f64> = last.iter().map(|r| r.sound).collect();
        let top = (0..x.len()).fold(0, |best, i| {
            if loudness[i] > loudness[best] {
                i
            } else {
                best
            }
        });
        worst = worst.max(x.iter().map(|p| p.distance(x[top])).fold(0.0, f64::max));
        let base = sound_rendezvous_step(&x, &loudness, &s.swarm).unwrap();
        for _ in 0..20 {
            let k = rng.random_range(1e-6..1e6);
            let scaled: Vec<f64> = loudness.iter().map(|v| v * k).collect();
            if sound_rendezvous_step(&x, &scaled, &s.swarm).unwrap() != base {
                variant += 1;
            }
        }
    }
    verdict(
        10,
        "sound rendezvous",
        worst <= 0.15 && variant == 0,
        format!("worst final distance to the loudest robot {worst:.4} m over 20 seeds; {variant} rescalings changed the output"),
    );
}

#[test]
fn criterion_11_battery_bookkeeping() {
    let power = PowerParams::default();
    let mut robot = RobotTruth::new("r0", Pose2D::default(), power.capacity_wh);
    robot.motor_left.duty = 1.0;
    robot.motor_right.duty = -1.0;
    let dt = 0.02;
    for _ in 0..(3600.0 / dt) as usize {
        robot = battery_step(&robot, None, dt, &power);
    }
    let drained = power.capacity_wh - robot.battery_wh;
    let drain_ok = (drained - 1.5).abs() <= 1e-9 && (robot.drawn_wh - 1.5).abs() <= 1e-9;

    let storm = Scenario::from_toml_str(
        r#"
name = "storm"
algorithm = "idle"
duration_s = 20.0
[robots]
count = 5
initial_battery_fraction = 0.1
[[charging.stations]]
id = "s0"
position = [0.3, 0.3]
[[charging.stations]]
id = "s1"
position = [2.2, 0.3]
"#,
        &[],
    )
    .unwrap();
    let (_, info, _) = simulate(&storm).unwrap();
    let mut granted: BTreeMap<&str, &str> = BTreeMap::new();
    let mut regrants = 0;
    let mut queued: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &info.charging_events {
        match e.event.as_str() {
            "granted" => {
                if granted
                    .insert(&e.robot_id, e.station_id.as_deref().unwrap_or(""))
                    .is_some()
                {
                    regrants += 1;
                }
            }
            "queued" => *queued.entry(&e.robot_id).or_default() += 1,
            _ => {}
        }
    }
    let stations: std::collections::BTreeSet<&str> = granted.values().copied().collect();
    let waiting_never_granted = queued.keys().all(|r| !granted.contains_key(r));
    let storm_ok = granted.len() == 2
        && stations.len() == 2
        && regrants == 0
        && queued.len() == 3
        && waiting_never_granted
        && info.stations_exclusive_throughout;
    verdict(
        11,
        "battery bookkeeping",
        drain_ok && storm_ok,
        format!(
            "1 h at 1.5 W drained {drained:.12} Wh; storm: {} granted on {} stations, {} queued, exclusive {}",
            granted.len(),
            stations.len(),
            queued.len(),
            info.stations_exclusive_throughout
        ),
    );
}

#[test]
fn criterion_12_bus_properties() {
    let bus = Bus::new();
    let namespaces = ["r0", "r1", "r2", "r3", ""];
    let channels = ["odom", "cmd_vel", "battery"];
    let mut topics = Vec::new();
    for ns in namespaces {
        for ch in channels {
            topics.push(if ns.is_empty() {
                TopicPath::global(ch).unwrap()
            } else {
                TopicPath::new(ns, ch).unwrap()
            });
        }
    }
    let publishers: Vec<_> = topics
        .iter()
        .map(|t| bus.advertise(t, None).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Per subscription: topic index, depth, model queue length, model drops.
    let mut subs = Vec::new();
    for (k, t) in topics.iter().enumerate() {
        for _ in 0..2 {
            let depth = rng.random_range(1..6);
            subs.push((bus.subscribe_with_depth(t, depth), k, depth, 0usize, 0u64));
        }
    }
    let mut pending = vec![0usize; topics.len()];
    let mut last_seq: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); subs.len()];
    let (mut leaks, mut non_monotonic, mut clock) = (0, 0, 0.0);
    let mut check = |subs: &mut Vec<(swarmtable::bus::Subscription, usize, usize, usize, u64)>,
                     drain_some: bool,
                     rng: &mut ChaCha8Rng| {
        for (s, (sub, k, _, queued, _)) in subs.iter_mut().enumerate() {
            if drain_some && rng.random_bool(0.5) {
                for env in sub.drain() {
                    if env.topic != topics[*k] {
                        leaks += 1;
                    }
                    let prev = last_seq[s].insert(0, env.seq).unwrap_or(0);
                    if env.seq <= prev {
                        non_monotonic += 1;
                    }
                }
                *queued = 0;
            }
        }
    };
    for i in 0..10_000u32 {
        let k = rng.random_range(0..topics.len());
        publishers[k].publish(Payload::Scalars(vec![f64::from(i)]));
        pending[k] += 1;
        if rng.random_bool(0.2) {
            clock += 0.01;
            bus.flush(clock);
            for (_, tk, depth, queued, drops) in subs.iter_mut() {
                let arrived = pending[*tk];
                let total = *queued + arrived;
                *drops += total.saturating_sub(*depth) as u64;
                *queued = total.min(*depth);
            }
            pending.iter_mut().for_each(|p| *p = 0);
            check(&mut subs, true, &mut rng);
        }
    }
    clock += 0.01;
    bus.flush(clock);
    for (_, tk, depth, queued, drops) in subs.iter_mut() {
        let total = *queued + pending[*tk];
        *drops += total.saturating_sub(*depth) as u64;
        *queued = total.min(*depth);
    }
    let mut accounting_errors = 0;
    for (sub, _, _, queued, drops) in &subs {
        let st = sub.stats();
        if st.dropped != *drops
            || sub.pending() != *queued
            || st.delivered != st.received + st.dropped + *queued as u64
        {
            accounting_errors += 1;
        }
    }
    check(&mut subs, false, &mut rng);
    for (k, t) in topics.iter().enumerate() {
        let st = bus.stats(t);
        let delivered_to_subs: u64 = subs
            .iter()
            .filter(|s| s.1 == k)
            .map(|s| s.0.stats().delivered)
            .sum();
        if st.offered != st.published || delivered_to_subs != 2 * st.published {
            accounting_errors += 1;
        }
    }

    // Same seed twice, byte for byte.
    let s = scenario("rendezvous.toml", &[]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_to_dir(&s, a.path()).unwrap();
    run_to_dir(&s, b.path()).unwrap();
    let same = |f: &str| {
        std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap()
    };
    let identical = same(TRAJECTORY_FILE) && same(SUMMARY_FILE);

    verdict(
        12,
        "bus properties",
        leaks == 0 && non_monotonic == 0 && accounting_errors == 0 && identical,
        format!(
            "1e4 publishes on {} topics: {leaks} leaked, {non_monotonic} out-of-order, {accounting_errors} accounting errors; \
             repeated run byte-identical: {identical}",
            topics.len()
        ),
    );
}
