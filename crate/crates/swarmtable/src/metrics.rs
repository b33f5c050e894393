//! Run metrics recomputed from a trajectory log.

use serde::{Deserialize, Serialize};

use swarmtable_core::controllers::FormationSpec;
use swarmtable_core::geom::{max_pairwise_distance, min_pairwise_distance};
use swarmtable_core::Vec2;

use crate::executor::loudest;
use crate::trajectory::{Trajectory, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_m: f64,
    pub std_m: f64,
    pub max_m: f64,
    pub samples: u64,
}

impl ErrorStats {
    /// Population statistics; `None` for no samples.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean_m: mean,
            std_m: var.sqrt(),
            max_m: values.iter().copied().fold(0.0, f64::max),
            samples: values.len() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotMetrics {
    pub robot_id: String,
    pub odom_vs_truth: Option<ErrorStats>,
    /// Camera track shifted so that it starts where odometry starts.
    pub odom_vs_camera: Option<ErrorStats>,
    pub camera_vs_truth: Option<ErrorStats>,
    pub max_speed_mps: Option<f64>,
    pub path_length_m: f64,
    pub final_battery_wh: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMetrics {
    pub min_over_run_m: f64,
    pub initial_max_m: f64,
    pub final_max_m: f64,
    pub final_min_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    pub robots: u64,
    pub duration_s: f64,
    pub per_robot: Vec<RobotMetrics>,
    pub odom_vs_truth: Option<ErrorStats>,
    pub odom_vs_camera: Option<ErrorStats>,
    /// Mean radial camera error is `camera_vs_truth.mean_m`.
    pub camera_vs_truth: Option<ErrorStats>,
    pub max_speed_mps: Option<f64>,
    pub pairwise: Option<PairwiseMetrics>,
    /// Mean over all pairs of `| |x_i − x_j| − |ξ_i − ξ_j| |` at the last step.
    pub formation_error_m: Option<f64>,
    /// Same, averaged over every step from convergence on.
    pub formation_error_after_convergence_m: Option<f64>,
    /// First step from which the convergence measure stays within the
    /// header threshold until the end of the run.
    pub convergence_step: Option<u64>,
    pub final_convergence_measure_m: Option<f64>,
}

fn xy(p: &[f64; 3]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

fn positions(step: &[TrajectoryRecord]) -> Vec<Vec2> {
    step.iter().map(|r| xy(&r.truth)).collect()
}

/// Mean over all pairs of the distance error against the target shape.
pub fn formation_error(positions: &[Vec2], offsets: &[Vec2]) -> f64 {
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = positions[i].distance(positions[j]);
            let target = offsets[i].distance(offsets[j]);
            acc += (d - target).abs();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        acc / pairs as f64
    }
}

/// Convergence measure of one step for the header's algorithm.
pub fn convergence_measure(traj: &Trajectory, step: &[TrajectoryRecord]) -> Option<f64> {
    let pts = positions(step);
    if pts.len() < 2 {
        return None;
    }
    match traj.header.algorithm.as_str() {
        "rendezvous" => Some(max_pairwise_distance(&pts)),
        "sound_rendezvous" => {
            let s: Vec<f64> = step.iter().map(|r| r.sound).collect();
            if s.iter().all(|&v| v == 0.0) {
                return Some(max_pairwise_distance(&pts));
            }
            let lead = pts[loudest(&s)];
            Some(pts.iter().map(|p| p.distance(lead)).fold(0.0, f64::max))
        }
        "formation" => {
            let offsets = traj.header.formation_offsets.as_ref()?;
            let spec = FormationSpec::new(offsets.iter().map(|o| Vec2::new(o[0], o[1])).collect());
            spec.residual(&pts).ok()
        }
        _ => None,
    }
}

pub fn compute(traj: &Trajectory) -> Summary {
    let n = traj.robot_count();
    let steps = traj.steps();
    let dt = traj.header.dt_s;

    let mut per_robot = Vec::with_capacity(n);
    let (mut all_ot, mut all_oc, mut all_ct) = (Vec::new(), Vec::new(), Vec::new());
    for (r, id) in traj.header.robots.iter().enumerate() {
        let recs: Vec<&TrajectoryRecord> = (0..steps).map(|k| &traj.step(k)[r]).collect();
        let ot: Vec<f64> = recs
            .iter()
            .map(|x| xy(&x.odom).distance(xy(&x.truth)))
            .collect();
        let ct: Vec<f64> = recs
            .iter()
            .filter_map(|x| x.camera.map(|c| xy(&c).distance(xy(&x.truth))))
            .collect();
        let mut oc = Vec::new();
        let mut shift = None;
        for x in &recs {
            if let Some(c) = x.camera {
                let s = *shift.get_or_insert(xy(&x.odom) - xy(&c));
                oc.push((xy(&c) + s).distance(xy(&x.odom)));
            }
        }
        let mut max_speed: Option<f64> = None;
        let mut path = 0.0;
        for w in recs.windows(2) {
            let d = xy(&w[1].truth).distance(xy(&w[0].truth));
            path += d;
            let v = d / dt;
            max_speed = Some(max_speed.map_or(v, |m| m.max(v)));
        }
        all_ot.extend_from_slice(&ot);
        all_oc.extend_from_slice(&oc);
        all_ct.extend_from_slice(&ct);
        per_robot.push(RobotMetrics {
            robot_id: id.clone(),
            odom_vs_truth: ErrorStats::of(&ot),
            odom_vs_camera: ErrorStats::of(&oc),
            camera_vs_truth: ErrorStats::of(&ct),
            max_speed_mps: max_speed,
            path_length_m: path,
            final_battery_wh: recs.last().map(|x| x.battery_wh),
        });
    }

    let pairwise = (n >= 2 && steps > 0).then(|| {
        let mut min_run = f64::INFINITY;
        for k in 0..steps {
            min_run = min_run.min(min_pairwise_distance(&positions(traj.step(k))));
        }
        let first = positions(traj.step(0));
        let last = positions(traj.step(steps - 1));
        PairwiseMetrics {
            min_over_run_m: min_run,
            initial_max_m: max_pairwise_distance(&first),
            final_max_m: max_pairwise_distance(&last),
            final_min_m: min_pairwise_distance(&last),
        }
    });

    let measures: Vec<Option<f64>> = (0..steps)
        .map(|k| convergence_measure(traj, traj.step(k)))
        .collect();
    let threshold = traj.header.convergence_threshold_m;
    let mut convergence_step = None;
    for k in (0..steps).rev() {
        match measures[k] {
            Some(m) if m <= threshold => convergence_step = Some(k as u64),
            _ => break,
        }
    }

    let offsets: Option<Vec<Vec2>> = traj
        .header
        .formation_offsets
        .as_ref()
        .map(|o| o.iter().map(|p| Vec2::new(p[0], p[1])).collect());
    let (formation_error_m, formation_error_after_convergence_m) = match (&offsets, steps) {
        (Some(o), s) if s > 0 && o.len() == n => {
            let last = formation_error(&positions(traj.step(steps - 1)), o);
            let after = convergence_step.map(|c| {
                let errs: Vec<f64> = (c as usize..steps)
                    .map(|k| formation_error(&positions(traj.step(k)), o))
                    .collect();
                errs.iter().sum::<f64>() / errs.len() as f64
            });
            (Some(last), after)
        }
        _ => (None, None),
    };

    Summary {
        steps: steps as u64,
        robots: n as u64,
        duration_s: steps.saturating_sub(1) as f64 * dt,
        max_speed_mps: per_robot
            .iter()
            .filter_map(|r| r.max_speed_mps)
            .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |m| m.max(v)))),
        per_robot,
        odom_vs_truth: ErrorStats::of(&all_ot),
        odom_vs_camera: ErrorStats::of(&all_oc),
        camera_vs_truth: ErrorStats::of(&all_ct),
        pairwise,
        formation_error_m,
        formation_error_after_convergence_m,
        convergence_step,
        final_convergence_measure_m: measures.last().copied().flatten(),
    }
}
