//! Newline-delimited JSON frames exchanged by the physical and twin processes.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lidarsim::{LaserScan, ScanParams};
use crate::worldsim::{Point2, Pose, StepEvent};

/// Longest accepted frame, newline excluded.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TwinMessage {
    CmdVel {
        v: f64,
        w: f64,
    },
    Scan {
        pose: Pose,
        ranges: Vec<Option<f64>>,
        angle_min: f64,
        angle_max: f64,
        max_range: f64,
    },
    Status {
        event: StepEvent,
        pose: Pose,
        goal: Point2,
    },
    Pause,
    Resume,
    Bye,
}

impl TwinMessage {
    pub fn scan(pose: Pose, scan: &LaserScan) -> Self {
        TwinMessage::Scan {
            pose,
            ranges: scan.ranges.clone(),
            angle_min: scan.params.angle_min,
            angle_max: scan.params.angle_max,
            max_range: scan.params.max_range,
        }
    }

    /// The pose and scan carried by a `Scan` frame.
    pub fn to_laser_scan(&self) -> Option<Result<(Pose, LaserScan)>> {
        match self {
            TwinMessage::Scan { pose, ranges, angle_min, angle_max, max_range } => {
                let params = ScanParams {
                    n_beams: ranges.len(),
                    angle_min: *angle_min,
                    angle_max: *angle_max,
                    max_range: *max_range,
                };
                let scan = LaserScan { ranges: ranges.clone(), params };
                Some(scan.validate().map(|_| (*pose, scan)))
            }
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TwinMessage::CmdVel { .. } => "cmd_vel",
            TwinMessage::Scan { .. } => "scan",
            TwinMessage::Status { .. } => "status",
            TwinMessage::Pause => "pause",
            TwinMessage::Resume => "resume",
            TwinMessage::Bye => "bye",
        }
    }

    /// True for a velocity command that would move the robot.
    pub fn is_motion(&self) -> bool {
        matches!(self, TwinMessage::CmdVel { v, w } if *v != 0.0 || *w != 0.0)
    }

    fn check(&self) -> Result<()> {
        let pose = |p: &Pose| ensure_finite("pose", &[p.x, p.y, p.theta]);
        match self {
            TwinMessage::CmdVel { v, w } => ensure_finite("velocity", &[*v, *w]),
            TwinMessage::Scan { pose: p, ranges, angle_min, angle_max, max_range } => {
                pose(p)?;
                ensure_finite("scan parameters", &[*angle_min, *angle_max, *max_range])?;
                let r: Vec<f64> = ranges.iter().flatten().copied().collect();
                ensure_finite("ranges", &r)
            }
            TwinMessage::Status { pose: p, goal, .. } => {
                pose(p)?;
                ensure_finite("goal", &[goal.x, goal.y])
            }
            TwinMessage::Pause | TwinMessage::Resume | TwinMessage::Bye => Ok(()),
        }
    }
}

/// One frame, trailing newline included. JSON has no NaN or infinity, so
/// non-finite payloads are refused here rather than garbled on the wire.
pub fn encode_message(msg: &TwinMessage) -> Result<Vec<u8>> {
    msg.check()?;
    let mut out = serde_json::to_vec(msg)?;
    if out.len() > MAX_LINE_BYTES {
        return Err(Error::Validation(format!("frame of {} bytes exceeds the line limit", out.len())));
    }
    out.push(b'\n');
    Ok(out)
}

/// Parses one frame; a trailing `\n` or `\r\n` is optional.
pub fn decode_message(bytes: &[u8]) -> Result<TwinMessage> {
    let line = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.len() > MAX_LINE_BYTES {
        return Err(protocol("line exceeds 1 MiB", &line[..256]));
    }
    let msg: TwinMessage = serde_json::from_slice(line).map_err(|e| protocol(&e.to_string(), line))?;
    msg.check().map_err(|e| protocol(&e.to_string(), line))?;
    Ok(msg)
}

fn protocol(reason: &str, line: &[u8]) -> Error {
    Error::Protocol { reason: reason.to_string(), line: String::from_utf8_lossy(line).into_owned() }
}

/// Reads one newline-terminated frame without buffering more than the
/// line limit. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: BufRead>(reader: &mut R) -> Result<Option<Vec<u8>>> {
    let mut buf = Vec::new();
    let n = reader.by_ref().take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        let reason = if buf.len() > MAX_LINE_BYTES { "line exceeds 1 MiB" } else { "stream ended mid-frame" };
        buf.truncate(256);
        return Err(protocol(reason, &buf));
    }
    Ok(Some(buf))
}

/// A framed, blocking message stream over TCP.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { reader, writer: BufWriter::new(stream) })
    }

    pub fn stream(&self) -> &TcpStream {
        self.reader.get_ref()
    }

    pub fn send(&mut self, msg: &TwinMessage) -> Result<()> {
        self.writer.write_all(&encode_message(msg)?)?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next message, or `None` once the peer has closed the stream.
    pub fn recv(&mut self) -> Result<Option<TwinMessage>> {
        match read_frame(&mut self.reader)? {
            Some(line) => decode_message(&line).map(Some),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_command_wire_form() {
        let bytes = encode_message(&TwinMessage::CmdVel { v: 0.0, w: 0.0 }).unwrap();
        assert_eq!(bytes, b"{\"type\":\"cmd_vel\",\"v\":0.0,\"w\":0.0}\n");
    }

    #[test]
    fn scan_and_status_field_names() {
        let msg = TwinMessage::Scan {
            pose: Pose::new(1.0, 2.0, 0.5),
            ranges: vec![Some(1.5), None],
            angle_min: -1.0,
            angle_max: 1.0,
            max_range: 10.0,
        };
        let text = String::from_utf8(encode_message(&msg).unwrap()).unwrap();
        assert_eq!(
            text,
            "{\"type\":\"scan\",\"pose\":{\"x\":1.0,\"y\":2.0,\"theta\":0.5},\"ranges\":[1.5,null],\
             \"angle_min\":-1.0,\"angle_max\":1.0,\"max_range\":10.0}\n"
        );
        let status = TwinMessage::Status { event: StepEvent::GoalReached, pose: Pose::new(0.0, 0.0, 0.0), goal: Point2::new(5.0, 0.0) };
        let text = String::from_utf8(encode_message(&status).unwrap()).unwrap();
        assert!(text.starts_with("{\"type\":\"status\",\"event\":\"goal\",\"pose\":"));
        assert_eq!(decode_message(text.as_bytes()).unwrap(), status);
    }

    #[test]
    fn unit_variants() {
        for (m, t) in [(TwinMessage::Pause, "pause"), (TwinMessage::Resume, "resume"), (TwinMessage::Bye, "bye")] {
            let line = format!("{{\"type\":\"{t}\"}}\n");
            assert_eq!(encode_message(&m).unwrap(), line.as_bytes());
            assert_eq!(decode_message(line.as_bytes()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for bad in [&b"{\"type\":\"warp\"}"[..], b"{\"type\":\"cmd_vel\",\"v\":1}", b"not json", b"", b"{\"v\":0.0,\"w\":0.0}"] {
            match decode_message(bad) {
                Err(Error::Protocol { line, .. }) => assert_eq!(line.as_bytes(), bad),
                other => panic!("expected protocol error, got {other:?}"),
            }
        }
    }

    #[test]
    fn refuses_non_finite_payloads() {
        assert!(encode_message(&TwinMessage::CmdVel { v: f64::NAN, w: 0.0 }).is_err());
    }

    #[test]
    fn framing_limits() {
        let mut ok = std::io::Cursor::new(b"{\"type\":\"bye\"}\n{\"type\":\"pause\"}\n".to_vec());
        assert_eq!(decode_message(&read_frame(&mut ok).unwrap().unwrap()).unwrap(), TwinMessage::Bye);
        assert_eq!(decode_message(&read_frame(&mut ok).unwrap().unwrap()).unwrap(), TwinMessage::Pause);
        assert!(read_frame(&mut ok).unwrap().is_none());

        let mut huge = vec![b' '; MAX_LINE_BYTES + 10];
        huge.push(b'\n');
        assert!(matches!(read_frame(&mut std::io::Cursor::new(huge)), Err(Error::Protocol { .. })));

        let mut exact = vec![b' '; MAX_LINE_BYTES - 14];
        exact.extend_from_slice(b"{\"type\":\"bye\"}\n");
        let frame = read_frame(&mut std::io::Cursor::new(exact)).unwrap().unwrap();
        assert_eq!(decode_message(&frame).unwrap(), TwinMessage::Bye);

        let mut cut = std::io::Cursor::new(b"{\"type\":\"by".to_vec());
        assert!(matches!(read_frame(&mut cut), Err(Error::Protocol { .. })));
    }
}
