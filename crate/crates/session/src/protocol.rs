//! JSON wire messages of the live session. Every message is one object with a
//! `"type"` field naming the variant.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use vitac_core::model::TAXELS;
use vitac_core::simulator::{SimCommand, SimState};

pub const PROTOCOL_VERSION: u32 = 1;

pub const ERR_BAD_MESSAGE: &str = "bad_message";
pub const ERR_UNEXPECTED: &str = "unexpected_message";
pub const ERR_NOT_CONTROLLER: &str = "not_controller";
pub const ERR_RECORDING_ACTIVE: &str = "recording_active";
pub const ERR_NOT_RECORDING: &str = "not_recording";
pub const ERR_BAD_EPISODE_ID: &str = "bad_episode_id";
pub const ERR_RECORD_FAILED: &str = "record_failed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireRates {
    pub tick_hz: f64,
    pub pose: f64,
    pub tactile: f64,
    pub marker: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireGeometry {
    pub rows: usize,
    pub cols: usize,
    pub pad_size: f64,
    pub width_max: f64,
    pub count_ceiling: u16,
}

/// TCP pose in the world frame; rotation is `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum SessionMsg {
    Command {
        linear: [f64; 3],
        angular: [f64; 3],
        width_rate: f64,
        button: bool,
    },
    RecordStart {
        episode_id: String,
    },
    RecordStop,
    Ping,
    Hello {
        protocol_version: u32,
        rates: WireRates,
        geometry: WireGeometry,
    },
    Frame {
        tick: u64,
        /// Master seconds.
        clock: f64,
        pose: WirePose,
        width: f64,
        button: bool,
        tactile_left: Vec<u16>,
        tactile_right: Vec<u16>,
    },
    Recorded {
        dir: String,
        n_ticks: usize,
    },
    Error {
        code: String,
        detail: String,
    },
    Pong,
}

impl SessionMsg {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        SessionMsg::Error {
            code: code.into(),
            detail: detail.into(),
        }
    }

    pub fn from_command(c: &SimCommand) -> Self {
        SessionMsg::Command {
            linear: c.linear,
            angular: c.angular,
            width_rate: c.width_rate,
            button: c.button,
        }
    }

    pub fn as_command(&self) -> Option<SimCommand> {
        match *self {
            SessionMsg::Command {
                linear,
                angular,
                width_rate,
                button,
            } => Some(SimCommand {
                linear,
                angular,
                width_rate,
                button,
            }),
            _ => None,
        }
    }

    pub fn frame(tick: u64, s: &SimState, left: &[u16; TAXELS], right: &[u16; TAXELS]) -> Self {
        let q = s.tcp.rotation.quaternion();
        let p = s.tcp.translation;
        SessionMsg::Frame {
            tick,
            clock: s.clock,
            pose: WirePose {
                translation: [p.x, p.y, p.z],
                rotation: [q.w, q.i, q.j, q.k],
            },
            width: s.width,
            button: s.button,
            tactile_left: left.to_vec(),
            tactile_right: right.to_vec(),
        }
    }

    /// Wire name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            SessionMsg::Command { .. } => "Command",
            SessionMsg::RecordStart { .. } => "RecordStart",
            SessionMsg::RecordStop => "RecordStop",
            SessionMsg::Ping => "Ping",
            SessionMsg::Hello { .. } => "Hello",
            SessionMsg::Frame { .. } => "Frame",
            SessionMsg::Recorded { .. } => "Recorded",
            SessionMsg::Error { .. } => "Error",
            SessionMsg::Pong => "Pong",
        }
    }

    pub fn from_client(&self) -> bool {
        matches!(
            self,
            SessionMsg::Command { .. } | SessionMsg::RecordStart { .. } | SessionMsg::RecordStop | SessionMsg::Ping
        )
    }
}

/// Field names of each variant in encoding order.
fn fields_of(kind: &str) -> &'static [&'static str] {
    match kind {
        "Command" => &["linear", "angular", "width_rate", "button"],
        "RecordStart" => &["episode_id"],
        "Hello" => &["protocol_version", "rates", "geometry"],
        "Frame" => &["tick", "clock", "pose", "width", "button", "tactile_left", "tactile_right"],
        "Recorded" => &["dir", "n_ticks"],
        "Error" => &["code", "detail"],
        _ => &[],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    /// Byte offset where decoding stopped.
    pub offset: usize,
    /// Top-level field that is missing or malformed, when known.
    pub field: Option<String>,
    pub detail: String,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot decode message at byte {}", self.offset)?;
        if let Some(field) = &self.field {
            write!(f, " (field `{field}`)")?;
        }
        write!(f, ": {}", self.detail)
    }
}

impl std::error::Error for DecodeError {}

/// Encode as a single-line JSON object. Floats must be finite.
pub fn encode_msg(m: &SessionMsg) -> String {
    serde_json::to_string(m).expect("session messages always serialize")
}

pub fn decode_msg(bytes: &[u8]) -> Result<SessionMsg, DecodeError> {
    let msg: SessionMsg = serde_json::from_slice(bytes).map_err(|e| decode_error(bytes, &e))?;
    if let SessionMsg::Frame {
        tactile_left,
        tactile_right,
        ..
    } = &msg
    {
        for (name, cells) in [("tactile_left", tactile_left), ("tactile_right", tactile_right)] {
            if cells.len() != TAXELS {
                return Err(DecodeError {
                    offset: bytes.len(),
                    field: Some(name.into()),
                    detail: format!("expected {TAXELS} cells, found {}", cells.len()),
                });
            }
        }
    }
    Ok(msg)
}

fn decode_error(bytes: &[u8], e: &serde_json::Error) -> DecodeError {
    let detail = e.to_string();
    if e.classify() == Category::Eof {
        let scan = scan_prefix(bytes);
        return DecodeError {
            offset: bytes.len(),
            field: scan.missing_field(),
            detail,
        };
    }
    let field = backticked(&detail, "missing field `")
        .or_else(|| backticked(&detail, "unknown field `"))
        .or_else(|| {
            (detail.contains("unknown variant") || detail.contains("missing field `type`")).then(|| "type".to_string())
        });
    DecodeError {
        offset: byte_offset(bytes, e.line(), e.column()),
        field,
        detail,
    }
}

fn backticked(s: &str, prefix: &str) -> Option<String> {
    let rest = &s[s.find(prefix)? + prefix.len()..];
    Some(rest[..rest.find('`')?].to_string())
}

/// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut start = 0;
    for _ in 1..line {
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(i) => start += i + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

/// What a truncated top-level object had delivered before it ended.
#[derive(Debug, Default)]
struct PrefixScan {
    kind: Option<String>,
    complete: Vec<String>,
    open_key: Option<String>,
}

impl PrefixScan {
    fn missing_field(&self) -> Option<String> {
        if let Some(k) = &self.open_key {
            return Some(k.clone());
        }
        let Some(kind) = &self.kind else {
            return Some("type".into());
        };
        fields_of(kind)
            .iter()
            .find(|f| !self.complete.iter().any(|c| c == *f))
            .map(|f| f.to_string())
    }
}

fn scan_prefix(bytes: &[u8]) -> PrefixScan {
    let mut scan = PrefixScan::default();
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    let mut str_start = 0;
    let mut expect_key = false;
    let mut key: Option<String> = None;
    for (i, &b) in bytes.iter().enumerate() {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
                if depth == 1 {
                    let s = String::from_utf8_lossy(&bytes[str_start..i]).into_owned();
                    if expect_key {
                        key = Some(s);
                        expect_key = false;
                    } else if key.as_deref() == Some("type") {
                        scan.kind = Some(s);
                    }
                }
            }
            continue;
        }
        match b {
            b'"' => {
                in_str = true;
                str_start = i + 1;
            }
            b'{' | b'[' => {
                depth += 1;
                if depth == 1 {
                    expect_key = true;
                }
            }
            b'}' | b']' => {
                if depth == 1 {
                    scan.complete.extend(key.take());
                }
                depth = depth.saturating_sub(1);
            }
            b':' if depth == 1 => scan.open_key = key.clone(),
            b',' if depth == 1 => {
                scan.complete.extend(key.take());
                scan.open_key = None;
                expect_key = true;
            }
            _ => {}
        }
    }
    // A key whose closing quote or colon never arrived is itself missing.
    if in_str && depth == 1 && expect_key {
        scan.open_key = None;
    }
    scan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_frame() -> SessionMsg {
        let mut left = [0u16; TAXELS];
        let mut right = [0u16; TAXELS];
        left[0] = 1023;
        right[255] = 7;
        SessionMsg::Frame {
            tick: 42,
            clock: 1.25,
            pose: WirePose {
                translation: [0.4, -0.2, 0.3],
                rotation: [1.0, 0.0, 0.0, 0.0],
            },
            width: 0.07,
            button: true,
            tactile_left: left.to_vec(),
            tactile_right: right.to_vec(),
        }
    }

    #[test]
    fn ping_pong_round_trip() {
        assert_eq!(encode_msg(&SessionMsg::Ping), r#"{"type":"Ping"}"#);
        for m in [SessionMsg::Ping, SessionMsg::Pong, SessionMsg::RecordStop] {
            assert_eq!(decode_msg(encode_msg(&m).as_bytes()).unwrap(), m);
        }
    }

    #[test]
    fn frame_round_trip_keeps_arrays() {
        let m = sample_frame();
        let back = decode_msg(encode_msg(&m).as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_frame_names_missing_field() {
        let text = encode_msg(&sample_frame());
        let cut = text.find("\"tactile_right\"").unwrap();
        let e = decode_msg(&text.as_bytes()[..cut]).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("tactile_right"));
        assert_eq!(e.offset, cut);

        let mid = text.find("\"tactile_left\":[").unwrap() + 20;
        let e = decode_msg(&text.as_bytes()[..mid]).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("tactile_left"));

        let e = decode_msg(br#"{"type":"Fra"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("type"));
    }

    #[test]
    fn every_truncation_is_an_error() {
        let text = encode_msg(&sample_frame());
        for k in 0..text.len() {
            let e = decode_msg(&text.as_bytes()[..k]).unwrap_err();
            assert!(e.offset <= k);
        }
    }

    #[test]
    fn structural_errors_name_fields() {
        let e = decode_msg(br#"{"type":"RecordStart"}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("episode_id"));
        let e = decode_msg(br#"{"type":"Teleport"}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("type"));
        let e = decode_msg(br#"{"linear":[0,0,0]}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("type"));
        let e = decode_msg(b"{\"type\":\n\"Ping\" x}").unwrap_err();
        assert_eq!(e.offset, 16);
    }

    #[test]
    fn short_tactile_array_rejected() {
        let mut m = sample_frame();
        if let SessionMsg::Frame { tactile_right, .. } = &mut m {
            tactile_right.pop();
        }
        let e = decode_msg(encode_msg(&m).as_bytes()).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("tactile_right"));
    }

    #[test]
    fn command_conversion() {
        let c = SimCommand {
            linear: [9.0, 0.0, 0.0],
            angular: [0.0, 0.1, 0.0],
            width_rate: -0.2,
            button: true,
        };
        assert_eq!(SessionMsg::from_command(&c).as_command(), Some(c));
        assert!(SessionMsg::from_command(&c).from_client());
        assert!(!sample_frame().from_client());
    }
}
