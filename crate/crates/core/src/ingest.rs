//! Parsers for the on-disk device logs of a recording session.
//!
//! Text logs are UTF-8, one record per line, `#` starts a comment line.
//! The tactile log is a sequence of fixed-size little-endian records:
//!
//! ```text
//! offset  size  field
//!      0     4  magic 0x54414331 (u32)
//!      4     8  t, f64 seconds on the MCU clock
//!     12     1  jaw (0 = left, 1 = right)
//!     13     2  reserved, zero
//!     15   512  256 x u16 counts, row-major, row 0 nearest the gripper base
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ButtonEvent, Clock, DeviceId, Edge, FrameRef, Jaw, ModelError, PoseFrame, PoseSample,
    RawEpisode, TactileFrame, TactileGrid, Timestamp, TAXELS,
};

pub const TACTILE_MAGIC: u32 = 0x5441_4331;
pub const TACTILE_HEADER_LEN: usize = 15;
pub const TACTILE_RECORD_LEN: usize = TACTILE_HEADER_LEN + 2 * TAXELS;

/// Largest accepted |‖q‖ − 1| in trajectory input before renormalization.
pub const QUAT_INPUT_TOL: f64 = 1e-3;

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const TACTILE_FILE: &str = "tactile.bin";
pub const BUTTON_FILE: &str = "buttons.txt";
pub const MARKER_FILE: &str = "markers.txt";
pub const FRAMES_FILE: &str = "frames.txt";
pub const SYNC_FILE: &str = "sync.txt";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record ({reason})")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: quaternion norm {norm} too far from 1")]
    BadQuaternion { line: usize, norm: f64 },
    #[error("line {line}: timestamp not strictly increasing")]
    NonMonotonic { line: usize },
    #[error("line {line}: button edges must alternate starting with P")]
    NonAlternating { line: usize },
    #[error("line {line}: unknown marker id {id}")]
    UnknownMarker { line: usize, id: u32 },
    #[error("byte {offset}: truncated tactile record")]
    TruncatedRecord { offset: usize },
    #[error("byte {offset}: bad record magic")]
    BadMagic { offset: usize },
    #[error("byte {offset}: cell {cell} value {value} out of range")]
    ValueOutOfRange { offset: usize, cell: usize, value: u16 },
    #[error("byte {offset}: bad header field `{field}`")]
    BadHeader { offset: usize, field: &'static str },
    #[error("byte {offset}: record earlier than the previous one")]
    NonMonotonicRecord { offset: usize },
    #[error("missing {stream} log at {}", path.display())]
    MissingStream { stream: &'static str, path: PathBuf },
    #[error("{}: {err}", path.display())]
    Io {
        path: PathBuf,
        err: std::io::Error,
    },
    #[error("{}: {err}", path.display())]
    InFile {
        path: PathBuf,
        err: Box<IngestError>,
    },
}

/// Left and right jaw fiducial ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerIds {
    pub left: u32,
    pub right: u32,
}

impl Default for MarkerIds {
    fn default() -> Self {
        Self { left: 7, right: 8 }
    }
}

impl MarkerIds {
    pub fn contains(&self, id: u32) -> bool {
        id == self.left || id == self.right
    }
}

/// A pre-detected jaw fiducial, positioned in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerObservation {
    t: Timestamp,
    marker_id: u32,
    translation: Vector3<f64>,
}

impl MarkerObservation {
    pub fn new(t: Timestamp, marker_id: u32, translation: Vector3<f64>) -> Result<Self, ModelError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteTranslation);
        }
        Ok(Self {
            t,
            marker_id,
            translation,
        })
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }

    pub fn marker_id(&self) -> u32 {
        self.marker_id
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_time(&self, t: Timestamp) -> Self {
        Self { t, ..self.clone() }
    }
}

/// Which device clock stamps which stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDevices {
    /// Trajectory, marker and frame logs.
    pub camera: DeviceId,
    /// Tactile and button logs.
    pub mcu: DeviceId,
}

impl Default for StreamDevices {
    fn default() -> Self {
        Self {
            camera: DeviceId::new("cam").expect("valid id"),
            mcu: DeviceId::new("mcu").expect("valid id"),
        }
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n').enumerate().filter_map(|(i, l)| {
        let l = l.strip_suffix('\r').unwrap_or(l);
        let trimmed = l.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, trimmed))
        }
    })
}

fn num(line: usize, tok: &str) -> Result<f64, IngestError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| malformed(line, format!("non-numeric token {tok:?}")))?;
    if !v.is_finite() {
        return Err(malformed(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn stamp(line: usize, tok: &str, clock: Clock) -> Result<Timestamp, IngestError> {
    let secs = num(line, tok)?;
    Timestamp::new(secs, clock).map_err(|e| malformed(line, e.to_string()))
}

fn fields<const N: usize>(line: usize, rec: &str) -> Result<[&str; N], IngestError> {
    let toks: Vec<&str> = rec.split_whitespace().collect();
    toks.try_into()
        .map_err(|t: Vec<&str>| malformed(line, format!("expected {N} fields, found {}", t.len())))
}

/// Parse a SLAM trajectory (`t tx ty tz qx qy qz qw` per line) into camera
/// frame poses stored with `(w, x, y, z)` quaternions.
pub fn parse_trajectory(text: &str, clock: Clock) -> Result<Vec<PoseSample>, IngestError> {
    let mut out: Vec<PoseSample> = Vec::new();
    for (line, rec) in records(text) {
        let f = fields::<8>(line, rec)?;
        let t = stamp(line, f[0], clock)?;
        let mut v = [0.0; 7];
        for (slot, tok) in v.iter_mut().zip(&f[1..]) {
            *slot = num(line, tok)?;
        }
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_INPUT_TOL {
            return Err(IngestError::BadQuaternion { line, norm });
        }
        if let Some(prev) = out.last() {
            if t.secs() <= prev.t().secs() {
                return Err(IngestError::NonMonotonic { line });
            }
        }
        let pose = PoseSample::new(t, PoseFrame::Camera, Vector3::new(v[0], v[1], v[2]), q)
            .map_err(|e| malformed(line, e.to_string()))?;
        out.push(pose);
    }
    Ok(out)
}

/// Parse the binary tactile log. Frames come back in file order, which must
/// be non-decreasing in time.
pub fn parse_tactile_log(
    bytes: &[u8],
    clock: Clock,
    ceiling: u16,
) -> Result<Vec<TactileFrame>, IngestError> {
    let mut out = Vec::with_capacity(bytes.len() / TACTILE_RECORD_LEN);
    let mut offset = 0;
    let mut last_t = f64::NEG_INFINITY;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        if rest.len() < 4 {
            return Err(IngestError::TruncatedRecord { offset });
        }
        if u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) != TACTILE_MAGIC {
            return Err(IngestError::BadMagic { offset });
        }
        if rest.len() < TACTILE_RECORD_LEN {
            return Err(IngestError::TruncatedRecord { offset });
        }
        let mut tb = [0u8; 8];
        tb.copy_from_slice(&rest[4..12]);
        let secs = f64::from_le_bytes(tb);
        let t = Timestamp::new(secs, clock).map_err(|_| IngestError::BadHeader {
            offset: offset + 4,
            field: "t",
        })?;
        let jaw = Jaw::from_u8(rest[12]).ok_or(IngestError::BadHeader {
            offset: offset + 12,
            field: "jaw",
        })?;
        if rest[13] != 0 || rest[14] != 0 {
            return Err(IngestError::BadHeader {
                offset: offset + 13,
                field: "reserved",
            });
        }
        if secs < last_t {
            return Err(IngestError::NonMonotonicRecord { offset });
        }
        last_t = secs;
        let mut cells = [0u16; TAXELS];
        for (cell, chunk) in rest[TACTILE_HEADER_LEN..TACTILE_RECORD_LEN]
            .chunks_exact(2)
            .enumerate()
        {
            let value = u16::from_le_bytes([chunk[0], chunk[1]]);
            if value > ceiling {
                return Err(IngestError::ValueOutOfRange {
                    offset: offset + TACTILE_HEADER_LEN + 2 * cell,
                    cell,
                    value,
                });
            }
            cells[cell] = value;
        }
        let grid = TactileGrid::new(cells, ceiling).expect("cells checked above");
        out.push(TactileFrame::new(t, jaw, grid));
        offset += TACTILE_RECORD_LEN;
    }
    Ok(out)
}

/// Parse `t P` / `t R` lines.
pub fn parse_button_log(text: &str, clock: Clock) -> Result<Vec<ButtonEvent>, IngestError> {
    let mut out: Vec<ButtonEvent> = Vec::new();
    for (line, rec) in records(text) {
        let f = fields::<2>(line, rec)?;
        let t = stamp(line, f[0], clock)?;
        let edge = match f[1] {
            "P" => Edge::Press,
            "R" => Edge::Release,
            other => return Err(malformed(line, format!("unknown edge {other:?}"))),
        };
        let expected = if out.len().is_multiple_of(2) {
            Edge::Press
        } else {
            Edge::Release
        };
        if edge != expected {
            return Err(IngestError::NonAlternating { line });
        }
        if let Some(prev) = out.last() {
            if t.secs() <= prev.t.secs() {
                return Err(IngestError::NonMonotonic { line });
            }
        }
        out.push(ButtonEvent { t, edge });
    }
    Ok(out)
}

/// Parse `t id tx ty tz` lines. Output is stably sorted by time.
pub fn parse_marker_log(
    text: &str,
    clock: Clock,
    ids: MarkerIds,
) -> Result<Vec<MarkerObservation>, IngestError> {
    let mut out = Vec::new();
    for (line, rec) in records(text) {
        let f = fields::<5>(line, rec)?;
        let t = stamp(line, f[0], clock)?;
        let id: u32 = f[1]
            .parse()
            .map_err(|_| malformed(line, format!("bad marker id {:?}", f[1])))?;
        if !ids.contains(id) {
            return Err(IngestError::UnknownMarker { line, id });
        }
        let p = Vector3::new(num(line, f[2])?, num(line, f[3])?, num(line, f[4])?);
        out.push(MarkerObservation::new(t, id, p).map_err(|e| malformed(line, e.to_string()))?);
    }
    out.sort_by(|a, b| a.t().secs().total_cmp(&b.t().secs()));
    Ok(out)
}

/// Parse `t index uri` lines; indices must increase strictly with time.
pub fn parse_frames_log(text: &str, clock: Clock) -> Result<Vec<FrameRef>, IngestError> {
    let mut out: Vec<FrameRef> = Vec::new();
    for (line, rec) in records(text) {
        let f = fields::<3>(line, rec)?;
        let t = stamp(line, f[0], clock)?;
        let index: u64 = f[1]
            .parse()
            .map_err(|_| malformed(line, format!("bad frame index {:?}", f[1])))?;
        if let Some(prev) = out.last() {
            if t.secs() <= prev.t.secs() || index <= prev.index {
                return Err(IngestError::NonMonotonic { line });
            }
        }
        out.push(FrameRef {
            t,
            index,
            uri: f[2].to_string(),
        });
    }
    Ok(out)
}

/// Parse `device t` lines: each device's local time of the sync pulse.
pub fn parse_sync_log(text: &str) -> Result<BTreeMap<DeviceId, Timestamp>, IngestError> {
    let mut out = BTreeMap::new();
    for (line, rec) in records(text) {
        let f = fields::<2>(line, rec)?;
        let dev = DeviceId::new(f[0]).map_err(|e| malformed(line, e.to_string()))?;
        let t = stamp(line, f[1], Clock::Local(dev))?;
        if out.insert(dev, t).is_some() {
            return Err(malformed(line, format!("duplicate device {dev}")));
        }
    }
    Ok(out)
}

fn read_file(dir: &Path, name: &str, stream: &'static str) -> Result<Vec<u8>, IngestError> {
    let path = dir.join(name);
    match fs::read(&path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(IngestError::MissingStream { stream, path })
        }
        Err(err) => Err(IngestError::Io { path, err }),
    }
}

fn read_text(dir: &Path, name: &str, stream: &'static str) -> Result<String, IngestError> {
    let bytes = read_file(dir, name, stream)?;
    String::from_utf8(bytes).map_err(|e| IngestError::MalformedLine {
        line: 0,
        reason: format!("{name}: invalid UTF-8 at byte {}", e.utf8_error().valid_up_to()),
    })
}

fn in_file<T>(dir: &Path, name: &str, r: Result<T, IngestError>) -> Result<T, IngestError> {
    r.map_err(|e| IngestError::InFile {
        path: dir.join(name),
        err: Box::new(e),
    })
}

/// Load every device log of a session directory.
pub fn read_raw_dir(
    dir: &Path,
    devices: StreamDevices,
    ids: MarkerIds,
    ceiling: u16,
) -> Result<RawEpisode, IngestError> {
    let cam = Clock::Local(devices.camera);
    let mcu = Clock::Local(devices.mcu);

    let text = read_text(dir, TRAJECTORY_FILE, "trajectory")?;
    let trajectory = in_file(dir, TRAJECTORY_FILE, parse_trajectory(&text, cam))?;

    let bytes = read_file(dir, TACTILE_FILE, "tactile")?;
    let tactile = in_file(dir, TACTILE_FILE, parse_tactile_log(&bytes, mcu, ceiling))?;
    let (tactile_left, tactile_right) = tactile.into_iter().partition(|f| f.jaw() == Jaw::Left);

    let text = read_text(dir, BUTTON_FILE, "button")?;
    let buttons = in_file(dir, BUTTON_FILE, parse_button_log(&text, mcu))?;

    let text = read_text(dir, MARKER_FILE, "marker")?;
    let markers = in_file(dir, MARKER_FILE, parse_marker_log(&text, cam, ids))?;

    let text = read_text(dir, FRAMES_FILE, "frames")?;
    let frames = in_file(dir, FRAMES_FILE, parse_frames_log(&text, cam))?;

    let text = read_text(dir, SYNC_FILE, "sync")?;
    let sync_markers = in_file(dir, SYNC_FILE, parse_sync_log(&text))?;

    Ok(RawEpisode {
        trajectory,
        tactile_left,
        tactile_right,
        buttons,
        markers,
        frames,
        sync_markers,
    })
}
