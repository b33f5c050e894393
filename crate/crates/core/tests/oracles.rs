//! Frozen expected values, each worked out by hand from the robot geometry
//! (r = 0.016 m, L = 0.06 m, 1440 ticks/rev) rather than from the code.

use std::f64::consts::PI;

use swarmtable_core::controllers::{
    contraction_step_bound, rendezvous_step, sound_rendezvous_step, FormationSpec, SwarmConfig,
};
use swarmtable_core::kinematics::{forward_kinematics, inverse_kinematics, saturate_twist};
use swarmtable_core::motor::{advance_plant, MotorPlantParams, MotorState};
use swarmtable_core::odometry::{arc_radius, closed_form_arc, tick_split, ArcRadius};
use swarmtable_core::world::{
    battery_step, sample_microphone, PowerParams, RobotTruth, SoundModelParams, SoundSource,
};
use swarmtable_core::{normalize_angle, Pose2D, RobotParams, Twist, Vec2, WheelSpeeds};

fn close(got: f64, want: f64, tol: f64) {
    assert!(
        (got - want).abs() <= tol,
        "got {got}, want {want} (tol {tol})"
    );
}

#[test]
fn forward_kinematics_frozen() {
    let p = RobotParams::default();
    let t = forward_kinematics(WheelSpeeds::new(10.0, 12.5), &p).unwrap();
    // v = 0.016·22.5/2, ω = 0.016·2.5/0.06
    close(t.linear_mps, 0.18, 1e-15);
    close(t.angular_radps, 2.0 / 3.0, 1e-15);
}

#[test]
fn inverse_kinematics_frozen() {
    let p = RobotParams::default();
    let w = inverse_kinematics(Twist::new(0.1, 1.0), &p).unwrap();
    // (0.1 ∓ 0.03) / 0.016
    close(w.left_radps, 4.375, 1e-12);
    close(w.right_radps, 8.125, 1e-12);
}

#[test]
fn tick_geometry_frozen() {
    let p = RobotParams::default();
    close(p.radians_per_tick(), 0.004_363_323_129_985_824, 1e-18);
    close(p.meters_per_tick(), 6.981_317_007_977_318e-5, 1e-18);
    // 0.2 m/s straight for 1 s: 12.5 rad/s per wheel = 18000/2π ticks.
    let (l, r) = tick_split(Twist::new(0.2, 0.0), 1.0, &p).unwrap();
    close(l, 2_864.788_975_654_116, 1e-9);
    close(r, l, 0.0);
}

#[test]
fn saturation_frozen() {
    let p = RobotParams::default();
    close(
        saturate_twist(Twist::new(0.5, 0.0), &p).linear_mps,
        0.28,
        1e-12,
    );
    // Pure spin at 20 rad/s needs 37.5 rad/s per wheel; the 17.5 cap gives 28/3 rad/s.
    close(
        saturate_twist(Twist::new(0.0, 20.0), &p).angular_radps,
        28.0 / 3.0,
        1e-12,
    );
}

#[test]
fn arc_radius_frozen() {
    let p = RobotParams::default();
    match arc_radius(0.1, 0.2, &p) {
        ArcRadius::Finite(r) => close(r, 0.09, 1e-12),
        other => panic!("expected a finite radius, got {other:?}"),
    }
    assert_eq!(arc_radius(0.1, 0.1, &p), ArcRadius::Straight);
}

#[test]
fn half_circle_frozen() {
    // R = 0.4 m, half a turn ends 0.8 m to the left facing backwards.
    let end = closed_form_arc(Pose2D::new(0.0, 0.0, 0.0), 0.2, 0.5, 2.0 * PI);
    close(end.x_m, 0.0, 1e-12);
    close(end.y_m, 0.8, 1e-12);
    close(end.theta_rad, PI, 1e-12);
}

#[test]
fn angle_wrap_frozen() {
    close(normalize_angle(3.0 * PI), PI, 1e-12);
    close(normalize_angle(-PI), PI, 1e-12);
    close(normalize_angle(-0.5 * PI - 4.0 * PI), -0.5 * PI, 1e-12);
}

#[test]
fn motor_step_response_frozen() {
    // Full duty from rest for one time constant reaches 1 − 1/e of top speed.
    let plant = MotorPlantParams::default();
    let step = advance_plant(MotorState::default(), 1.0, plant.time_constant_s, &plant);
    close(
        step.state.wheel_speed_radps,
        17.5 * (1.0 - (-1.0f64).exp()),
        1e-12,
    );
    // Rotation is the integral: 17.5·(τ − τ(1 − 1/e)) = 17.5·τ/e.
    close(step.rotation_rad, 17.5 * 0.1 * (-1.0f64).exp(), 1e-12);
}

#[test]
fn battery_frozen() {
    let power = PowerParams::default();
    close(power.capacity_wh, 7.4, 1e-15);
    close(power.draw_w(0.0), 0.9, 1e-15);
    close(power.draw_w(1.0), 1.5, 1e-15);
    let robot = RobotTruth::new("a", Pose2D::default(), 7.4);
    // One minute idle costs 0.9/60 Wh.
    let after = battery_step(&robot, None, 60.0, &power);
    close(robot.battery_wh - after.battery_wh, 0.015, 1e-12);
}

#[test]
fn microphone_frozen() {
    let src = SoundSource {
        position: Vec2::new(1.0, 0.0),
        power_w: 1.0,
        active: true,
    };
    let iso = SoundModelParams {
        lobe_exponent: 0.0,
        ..SoundModelParams::default()
    };
    // 1 W at 1 m spreads over 4π m².
    close(
        sample_microphone(&Pose2D::default(), std::slice::from_ref(&src), &iso),
        0.079_577_471_545_947_67,
        1e-15,
    );
    // Facing away with a cosine lobe hears nothing.
    let lobe = SoundModelParams::default();
    assert_eq!(
        sample_microphone(&Pose2D::new(0.0, 0.0, PI), &[src], &lobe),
        0.0
    );
}

#[test]
fn rendezvous_pair_frozen() {
    let v = rendezvous_step(
        &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)],
        &SwarmConfig::default(),
    )
    .unwrap();
    assert_eq!(v, vec![Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)]);
}

#[test]
fn sound_rendezvous_frozen() {
    let cfg = SwarmConfig::default();
    let pts = [
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(0.0, 1.0),
    ];
    let v = sound_rendezvous_step(&pts, &[0.2, 0.9, 0.5], &cfg).unwrap();
    assert_eq!(
        v,
        vec![Vec2::new(1.0, 0.0), Vec2::ZERO, Vec2::new(1.0, -1.0)]
    );
    let tie = sound_rendezvous_step(&pts[..2], &[0.5, 0.5], &cfg).unwrap();
    assert_eq!(tie, vec![Vec2::ZERO, Vec2::new(-1.0, 0.0)]);
}

#[test]
fn pentagon_frozen() {
    let spec = FormationSpec::regular_polygon(5, 0.25);
    for o in &spec.offsets {
        close(o.norm(), 0.212_662_702_088_009_97, 1e-12);
    }
    for k in 0..5 {
        close(
            spec.offsets[k].distance(spec.offsets[(k + 1) % 5]),
            0.25,
            1e-12,
        );
    }
}

#[test]
fn contraction_bound_frozen() {
    // ε = 0.1, n = 5 halves every distance: 1 m → below 1 cm takes 7 steps.
    assert_eq!(contraction_step_bound(0.1, 5, 1.0, 0.01), Some(7));
    assert_eq!(contraction_step_bound(0.5, 5, 1.0, 0.01), None);
}
