//! CSV tables derived from a trajectory log, one row per sample.

use std::io::Write;
use std::str::FromStr;

use swarmtable_core::geom::max_pairwise_distance;
use swarmtable_core::Vec2;

use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `t,robot_id,source,x,y` for truth, odometry and camera.
    Paths,
    /// `t,max_m,min_m,mean_m` over all robot pairs.
    PairwiseDistance,
    /// `t,robot_id,odom_vs_truth_m,odom_vs_camera_m`.
    OdomError,
    /// `t,robot_id,dx,dy,radial_m`, only at camera frames.
    CameraVsTruth,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::Paths,
        PlotKind::PairwiseDistance,
        PlotKind::OdomError,
        PlotKind::CameraVsTruth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Paths => "paths",
            PlotKind::PairwiseDistance => "pairwise_distance",
            PlotKind::OdomError => "odom_error",
            PlotKind::CameraVsTruth => "camera_vs_truth",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PlotKind::ALL.iter().map(|k| k.name()).collect();
                format!(
                    "unknown plot kind `{s}`; expected one of {}",
                    names.join(", ")
                )
            })
    }
}

fn xy(p: &[f64; 3]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

/// Writes the table for `kind` as CSV.
pub fn write_plotdata<W: Write>(
    traj: &Trajectory,
    kind: PlotKind,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    match kind {
        PlotKind::Paths => {
            w.write_record(["t", "robot_id", "source", "x", "y"])?;
            for r in &traj.records {
                let t = r.t_s.to_string();
                let mut row = |source: &str, p: &[f64; 3]| {
                    w.write_record([
                        &t,
                        &r.robot_id,
                        source,
                        &p[0].to_string(),
                        &p[1].to_string(),
                    ])
                };
                row("truth", &r.truth)?;
                row("odom", &r.odom)?;
                if let Some(c) = &r.camera {
                    row("camera", c)?;
                }
            }
        }
        PlotKind::PairwiseDistance => {
            w.write_record(["t", "max_m", "min_m", "mean_m"])?;
            for k in 0..traj.steps() {
                let step = traj.step(k);
                let pts: Vec<Vec2> = step.iter().map(|r| xy(&r.truth)).collect();
                let (mut min, mut sum, mut n) = (f64::INFINITY, 0.0, 0usize);
                for i in 0..pts.len() {
                    for j in i + 1..pts.len() {
                        let d = pts[i].distance(pts[j]);
                        min = min.min(d);
                        sum += d;
                        n += 1;
                    }
                }
                if n == 0 {
                    continue;
                }
                w.write_record([
                    step[0].t_s.to_string(),
                    max_pairwise_distance(&pts).to_string(),
                    min.to_string(),
                    (sum / n as f64).to_string(),
                ])?;
            }
        }
        PlotKind::OdomError => {
            w.write_record(["t", "robot_id", "odom_vs_truth_m", "odom_vs_camera_m"])?;
            for r in &traj.records {
                let odom = xy(&r.odom);
                let vs_camera = r
                    .camera
                    .map(|c| odom.distance(xy(&c)).to_string())
                    .unwrap_or_default();
                w.write_record([
                    r.t_s.to_string(),
                    r.robot_id.clone(),
                    odom.distance(xy(&r.truth)).to_string(),
                    vs_camera,
                ])?;
            }
        }
        PlotKind::CameraVsTruth => {
            w.write_record(["t", "robot_id", "dx", "dy", "radial_m"])?;
            for r in &traj.records {
                if let Some(c) = r.camera {
                    let d = xy(&c) - xy(&r.truth);
                    w.write_record([
                        r.t_s.to_string(),
                        r.robot_id.clone(),
                        d.x.to_string(),
                        d.y.to_string(),
                        d.norm().to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
