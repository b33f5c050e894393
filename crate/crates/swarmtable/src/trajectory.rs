//! Line-delimited JSON trajectory logs.
//!
//! Line 1 is a header object; every further line is one
//! [`TrajectoryRecord`]. Floats are rounded to 9 significant digits before
//! they are written, so a log is a pure function of the simulated values
//! and reading it back yields exactly the numbers that were written.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "swarmtable-trajectory";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty trajectory file")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Round to 9 significant digits; `-0` becomes `0`.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let r: f64 = format!("{x:.8e}").parse().expect("formatted float");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn sig9_all<const N: usize>(v: [f64; N]) -> [f64; N] {
    v.map(sig9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub dt_s: f64,
    pub robots: Vec<String>,
    pub algorithm: String,
    pub footprint_radius_m: f64,
    /// Threshold on the algorithm's convergence measure: pairwise spread
    /// for rendezvous, distance to the loudest robot for sound rendezvous,
    /// formation residual for formation.
    pub convergence_threshold_m: f64,
    /// Per-robot formation offsets, in robot order.
    pub formation_offsets: Option<Vec<[f64; 2]>>,
}

impl TrajectoryHeader {
    pub fn rounded(mut self) -> Self {
        self.dt_s = sig9(self.dt_s);
        self.footprint_radius_m = sig9(self.footprint_radius_m);
        self.convergence_threshold_m = sig9(self.convergence_threshold_m);
        if let Some(o) = &mut self.formation_offsets {
            for p in o.iter_mut() {
                *p = sig9_all(*p);
            }
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: TrajectoryHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub t_s: f64,
    pub robot_id: String,
    pub truth: [f64; 3],
    pub odom: [f64; 3],
    pub camera: Option<[f64; 3]>,
    pub cmd: [f64; 2],
    pub wheels: [f64; 2],
    pub ticks: [i64; 2],
    pub battery_wh: f64,
    pub sound: f64,
}

impl TrajectoryRecord {
    pub fn rounded(mut self) -> Self {
        self.t_s = sig9(self.t_s);
        self.truth = sig9_all(self.truth);
        self.odom = sig9_all(self.odom);
        self.camera = self.camera.map(sig9_all);
        self.cmd = sig9_all(self.cmd);
        self.wheels = sig9_all(self.wheels);
        self.battery_wh = sig9(self.battery_wh);
        self.sound = sig9(self.sound);
        self
    }
}

/// Streams a log. Values are rounded on the way out.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, header: TrajectoryHeader) -> std::io::Result<Self> {
        let line = serde_json::to_string(&HeaderLine {
            header: header.rounded(),
        })?;
        writeln!(out, "{line}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, record: TrajectoryRecord) -> std::io::Result<TrajectoryRecord> {
        let record = record.rounded();
        let line = serde_json::to_string(&record)?;
        writeln!(self.out, "{line}")?;
        Ok(record)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn robot_count(&self) -> usize {
        self.header.robots.len()
    }

    pub fn steps(&self) -> usize {
        self.records.len() / self.robot_count().max(1)
    }

    /// Records of step `k` in header robot order.
    pub fn step(&self, k: usize) -> &[TrajectoryRecord] {
        let n = self.robot_count();
        &self.records[k * n..(k + 1) * n]
    }
}

/// Reads a log and checks its layout: one record per robot per step, in
/// header robot order, steps contiguous from 0.
pub fn read_trajectory<R: BufRead>(input: R) -> Result<Trajectory, TrajectoryError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(TrajectoryError::Empty)?;
    let first = first?;
    if first.trim().is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let header = serde_json::from_str::<HeaderLine>(&first)
        .map_err(|e| TrajectoryError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .header;
    if header.format != FORMAT || header.version != VERSION {
        return Err(TrajectoryError::Parse {
            line: 1,
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    if header.robots.is_empty() {
        return Err(TrajectoryError::Parse {
            line: 1,
            message: "header lists no robots".into(),
        });
    }
    let n = header.robots.len();
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| TrajectoryError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let k = records.len();
        let (step, robot) = ((k / n) as u64, &header.robots[k % n]);
        if rec.step != step || &rec.robot_id != robot {
            return Err(TrajectoryError::Parse {
                line: line_no,
                message: format!(
                    "expected step {step} robot {robot}, found step {} robot {}",
                    rec.step, rec.robot_id
                ),
            });
        }
        records.push(rec);
    }
    if records.len() % n != 0 {
        return Err(TrajectoryError::Parse {
            line: records.len() + 1,
            message: "last step is incomplete".into(),
        });
    }
    Ok(Trajectory { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> TrajectoryHeader {
        TrajectoryHeader {
            format: FORMAT.into(),
            version: VERSION,
            scenario: "t".into(),
            seed: 1,
            dt_s: 0.02,
            robots: vec!["r0".into(), "r1".into()],
            algorithm: "rendezvous".into(),
            footprint_radius_m: 0.05,
            convergence_threshold_m: 0.26,
            formation_offsets: None,
        }
    }

    fn record(step: u64, id: &str) -> TrajectoryRecord {
        TrajectoryRecord {
            step,
            t_s: step as f64 * 0.02,
            robot_id: id.into(),
            truth: [1.0 / 3.0, -0.0, std::f64::consts::PI],
            odom: [0.1, 0.2, 0.3],
            camera: None,
            cmd: [0.0, 0.0],
            wheels: [0.0, 0.0],
            ticks: [-3, 4],
            battery_wh: 7.4,
            sound: 1e-5,
        }
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0 / 3.0), 0.333333333);
        assert_eq!(sig9(123456789.49), 123456789.0);
        assert_eq!(sig9(-0.0).to_bits(), 0.0f64.to_bits());
        assert_eq!(sig9(sig9(2.0f64.sqrt())), sig9(2.0f64.sqrt()));
    }

    #[test]
    fn write_then_read_is_exact() {
        let mut w = TrajectoryWriter::new(Vec::new(), header()).unwrap();
        let mut written = Vec::new();
        for k in 0..3 {
            for id in ["r0", "r1"] {
                written.push(w.write(record(k, id)).unwrap());
            }
        }
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .contains("\"truth\":[0.333333333,0.0,3.14159265]"));
        let t = read_trajectory(bytes.as_slice()).unwrap();
        assert_eq!(t.records, written);
        assert_eq!(t.steps(), 3);
    }

    #[test]
    fn header_only_is_valid() {
        let bytes = TrajectoryWriter::new(Vec::new(), header())
            .unwrap()
            .finish()
            .unwrap();
        let t = read_trajectory(bytes.as_slice()).unwrap();
        assert!(t.records.is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(
            read_trajectory(&b""[..]),
            Err(TrajectoryError::Empty)
        ));
        let mut w = TrajectoryWriter::new(Vec::new(), header()).unwrap();
        w.write(record(0, "r0")).unwrap();
        let mut bytes = w.finish().unwrap();
        bytes.extend_from_slice(b"{\"step\":0,\"bogus\":1}\n");
        match read_trajectory(bytes.as_slice()) {
            Err(TrajectoryError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }

        let mut w = TrajectoryWriter::new(Vec::new(), header()).unwrap();
        w.write(record(0, "r1")).unwrap();
        let bytes = w.finish().unwrap();
        assert!(matches!(
            read_trajectory(bytes.as_slice()),
            Err(TrajectoryError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut w = TrajectoryWriter::new(Vec::new(), header()).unwrap();
        w.write(record(0, "r0")).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let text = text.replace("\"sound\"", "\"extra\":1,\"sound\"");
        assert!(read_trajectory(text.as_bytes()).is_err());
    }
}
