//! Framed byte transport for bus envelopes.
//!
//! A stream starts with one header line naming the format version, byte
//! order and field order. Each frame is a little-endian `u32` length
//! followed by one tab-separated UTF-8 record:
//! `topic, seq, stamp_s, kind, payload fields...`. Numbers use the shortest
//! decimal that parses back to the same `f64`.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

use crate::bus::{BusError, Payload, PoseEntry, StationGrant, TopicEnvelope, TopicPath};

pub const HEADER: &str =
    "swarmtable-wire/1 byteorder=le length=u32 fields=topic,seq,stamp_s,kind,payload";

/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME_BYTES: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unsupported stream header `{0}`")]
    Header(String),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(u32),
    #[error("malformed record: {0}")]
    Record(String),
    #[error(transparent)]
    Path(#[from] BusError),
}

pub fn write_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{HEADER}")
}

pub fn read_header<R: BufRead>(r: &mut R) -> Result<(), WireError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let line = line.trim_end_matches('\n');
    if line != HEADER {
        return Err(WireError::Header(line.to_owned()));
    }
    Ok(())
}

pub fn encode_record(env: &TopicEnvelope) -> String {
    let mut f: Vec<String> = vec![
        env.topic.to_string(),
        env.seq.to_string(),
        env.stamp_s.to_string(),
        env.payload.kind().to_owned(),
    ];
    let num = |x: &f64| x.to_string();
    match &env.payload {
        Payload::GlobalPositions(entries) => {
            f.push(entries.len().to_string());
            for e in entries {
                f.push(e.robot_id.clone());
                f.extend([e.x_m, e.y_m, e.theta_rad, e.stamp_s].iter().map(num));
            }
        }
        Payload::ChargingRequest { robot_id, x_m, y_m } => {
            f.push(robot_id.clone());
            f.extend([x_m, y_m].into_iter().map(num));
        }
        Payload::ChargingRelease { robot_id } => f.push(robot_id.clone()),
        Payload::ChargingReply(None) => f.push("none".into()),
        Payload::ChargingReply(Some(g)) => {
            f.push("some".into());
            f.push(g.station_id.clone());
            f.extend([g.x_m, g.y_m].iter().map(num));
        }
        Payload::Scalars(v) => {
            f.push(v.len().to_string());
            f.extend(v.iter().map(num));
        }
        other => f.extend(other.scalar_fields().expect("fixed tuple").iter().map(num)),
    }
    f.join("\t")
}

struct Fields<'a> {
    it: std::str::Split<'a, char>,
}

impl<'a> Fields<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, WireError> {
        self.it
            .next()
            .ok_or_else(|| WireError::Record(format!("missing {what}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, WireError> {
        let s = self.next(what)?;
        s.parse()
            .map_err(|_| WireError::Record(format!("{what}: `{s}` is not a number")))
    }

    fn count(&mut self, what: &str) -> Result<usize, WireError> {
        let s = self.next(what)?;
        s.parse()
            .map_err(|_| WireError::Record(format!("{what}: `{s}` is not a count")))
    }

    fn id(&mut self, what: &str) -> Result<String, WireError> {
        Ok(self.next(what)?.to_owned())
    }
}

pub fn decode_record(record: &str) -> Result<TopicEnvelope, WireError> {
    let mut f = Fields {
        it: record.split('\t'),
    };
    let topic = TopicPath::parse(f.next("topic")?)?;
    let seq = f.count("seq")? as u64;
    let stamp_s = f.f64("stamp_s")?;
    let kind = f.next("kind")?;
    let payload = match kind {
        "odom" => Payload::Odom {
            x_m: f.f64("x_m")?,
            y_m: f.f64("y_m")?,
            theta_rad: f.f64("theta_rad")?,
            v_mps: f.f64("v_mps")?,
            w_radps: f.f64("w_radps")?,
            stamp_s: f.f64("stamp_s")?,
        },
        "cmd_vel" => Payload::CmdVel {
            v_mps: f.f64("v_mps")?,
            w_radps: f.f64("w_radps")?,
        },
        "position_cmd" => Payload::PositionCmd {
            x_m: f.f64("x_m")?,
            y_m: f.f64("y_m")?,
        },
        "battery" => Payload::Battery {
            level_wh: f.f64("level_wh")?,
            fraction: f.f64("fraction")?,
            charging: f.f64("charging")? != 0.0,
        },
        "sound" => Payload::Sound {
            intensity: f.f64("intensity")?,
        },
        "global_positions" => {
            let n = f.count("entry count")?;
            let mut entries = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                entries.push(PoseEntry {
                    robot_id: f.id("robot_id")?,
                    x_m: f.f64("x_m")?,
                    y_m: f.f64("y_m")?,
                    theta_rad: f.f64("theta_rad")?,
                    stamp_s: f.f64("stamp_s")?,
                });
            }
            Payload::GlobalPositions(entries)
        }
        "charging_request" => Payload::ChargingRequest {
            robot_id: f.id("robot_id")?,
            x_m: f.f64("x_m")?,
            y_m: f.f64("y_m")?,
        },
        "charging_release" => Payload::ChargingRelease {
            robot_id: f.id("robot_id")?,
        },
        "charging_reply" => match f.next("grant tag")? {
            "none" => Payload::ChargingReply(None),
            "some" => Payload::ChargingReply(Some(StationGrant {
                station_id: f.id("station_id")?,
                x_m: f.f64("x_m")?,
                y_m: f.f64("y_m")?,
            })),
            other => return Err(WireError::Record(format!("bad grant tag `{other}`"))),
        },
        "scalars" => {
            let n = f.count("value count")?;
            let mut v = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                v.push(f.f64("value")?);
            }
            Payload::Scalars(v)
        }
        other => return Err(WireError::Record(format!("unknown kind `{other}`"))),
    };
    if f.it.next().is_some() {
        return Err(WireError::Record("trailing fields".into()));
    }
    Ok(TopicEnvelope {
        topic,
        seq,
        stamp_s,
        payload,
    })
}

pub fn write_frame<W: Write>(w: &mut W, env: &TopicEnvelope) -> Result<(), WireError> {
    let record = encode_record(env);
    let len = u32::try_from(record.len()).map_err(|_| WireError::FrameTooLarge(u32::MAX))?;
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(len));
    }
    w.write_all(&len.to_le_bytes())?;
    w.write_all(record.as_bytes())?;
    Ok(())
}

/// Reads one frame; `Ok(None)` at a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<TopicEnvelope>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    let record = String::from_utf8(buf).map_err(|_| WireError::Record("not UTF-8".into()))?;
    decode_record(&record).map(Some)
}
