//! On-disk episode format: `manifest.json` plus fixed-record little-endian
//! blobs, each covered by a CRC-32 in the manifest.

pub mod raw;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Rig;
use crate::model::{
    grid_time, DeviceId, FrameRef, Jaw, Label, PoseFrame, PoseSample, Segment, TactileFrame,
    TactileGrid, Timestamp, WidthSample, TAXELS,
};
use crate::sync::{
    AlignedEpisode, AlignedTactile, AlignmentPolicy, DeviceOffset, EpisodeEvent, EpisodeMeta,
};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Blob names (the checksum keys) and their file names.
pub const BLOBS: [(&str, &str); 8] = [
    ("timeline", "timeline.bin"),
    ("poses", "poses.bin"),
    ("width", "width.bin"),
    ("tactile", "tactile.bin"),
    ("tactile_valid", "tactile_valid.bin"),
    ("labels", "labels.bin"),
    ("segments", "segments.json"),
    ("events", "events.json"),
];

/// Largest deviation of a stored quaternion norm from 1 that still counts as
/// unit.
pub const QUAT_NORM_TOL: f64 = 1e-9;
/// Largest deviation of a tick from the ideal uniform grid.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{} exists and is not empty", .0.display())]
    DirNotEmpty(PathBuf),
    #[error("{}: {err}", path.display())]
    Io {
        path: PathBuf,
        err: std::io::Error,
    },
    #[error("episode has no ticks")]
    EmptyEpisode,
    #[error("inconsistent episode: {0}")]
    BadShape(String),
    #[error("checksum mismatch in blob {0:?}")]
    BadChecksum(String),
    #[error("format_version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("blob {blob:?} has {found} bytes, expected {expected}")]
    Truncated {
        blob: String,
        found: usize,
        expected: usize,
    },
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("blob {blob:?} tick {tick}: invalid {field}: {detail}")]
    InvalidValue {
        blob: String,
        tick: usize,
        field: String,
        detail: String,
    },
    #[error("window [{start}, {start}+{n}) outside 0..{n_ticks}")]
    OutOfRange {
        start: usize,
        n: usize,
        n_ticks: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |err| DatasetError::Io {
        path: path.to_path_buf(),
        err,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub name: String,
    pub tick: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub index: u64,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub episode_id: String,
    pub rate_hz: f64,
    pub n_ticks: usize,
    pub master: DeviceId,
    pub devices: Vec<DeviceOffset>,
    pub policy: AlignmentPolicy,
    pub rig: Rig,
    pub events: Vec<EventRecord>,
    /// Camera frame nearest each tick, if any.
    pub frames: Vec<Option<FrameRecord>>,
    /// Blob name → CRC-32 as 8 lowercase hex digits.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentRecord {
    t_start: f64,
    t_end: f64,
    label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventFull {
    name: String,
    tick: usize,
    t: f64,
}

pub fn crc32_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// Bytes per tick of each fixed-record blob.
pub fn record_len(blob: &str) -> Option<usize> {
    match blob {
        "timeline" | "width" => Some(8),
        "poses" => Some(7 * 8),
        "tactile" => Some(2 * TAXELS * 2),
        "tactile_valid" => Some(2),
        "labels" => Some(1),
        _ => None,
    }
}

/// Serialize every blob of an episode, keyed by blob name.
pub fn encode_blobs(ep: &AlignedEpisode) -> BTreeMap<&'static str, Vec<u8>> {
    let n = ep.n_ticks();
    let mut timeline = Vec::with_capacity(n * 8);
    let mut poses = Vec::with_capacity(n * 56);
    let mut width = Vec::with_capacity(n * 8);
    let mut tactile = Vec::with_capacity(n * 2 * TAXELS * 2);
    let mut valid = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        timeline.extend_from_slice(&ep.timeline[k].secs().to_le_bytes());
        let p = &ep.poses[k];
        let t = p.translation();
        for v in [t.x, t.y, t.z].into_iter().chain(p.quat_wxyz()) {
            poses.extend_from_slice(&v.to_le_bytes());
        }
        width.extend_from_slice(&ep.widths[k].width().to_le_bytes());
        for side in [&ep.tactile_left[k], &ep.tactile_right[k]] {
            for c in side.frame.grid().cells() {
                tactile.extend_from_slice(&c.to_le_bytes());
            }
            valid.push(side.valid as u8);
        }
        labels.push(ep.labels[k].as_u8());
    }
    let segments: Vec<SegmentRecord> = ep
        .segments
        .iter()
        .map(|s| SegmentRecord {
            t_start: s.t_start().secs(),
            t_end: s.t_end().secs(),
            label: s.label(),
        })
        .collect();
    let events: Vec<EventFull> = ep
        .events
        .iter()
        .map(|e| EventFull {
            name: e.name.clone(),
            tick: e.tick,
            t: e.t.secs(),
        })
        .collect();
    BTreeMap::from([
        ("timeline", timeline),
        ("poses", poses),
        ("width", width),
        ("tactile", tactile),
        ("tactile_valid", valid),
        ("labels", labels),
        ("segments", json_bytes(&segments)),
        ("events", json_bytes(&events)),
    ])
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

/// Manifest describing `ep` whose blobs have the given bytes.
pub fn build_manifest(ep: &AlignedEpisode, blobs: &BTreeMap<&'static str, Vec<u8>>) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        episode_id: ep.meta.episode_id.clone(),
        rate_hz: ep.meta.rate_hz,
        n_ticks: ep.n_ticks(),
        master: ep.meta.master,
        devices: ep.meta.devices.clone(),
        policy: ep.meta.policy,
        rig: ep.meta.rig.clone(),
        events: ep
            .events
            .iter()
            .map(|e| EventRecord {
                name: e.name.clone(),
                tick: e.tick,
            })
            .collect(),
        frames: ep
            .frames
            .iter()
            .map(|f| {
                f.as_ref().map(|f| FrameRecord {
                    t: f.t.secs(),
                    index: f.index,
                    uri: f.uri.clone(),
                })
            })
            .collect(),
        checksums: blobs
            .iter()
            .map(|(k, v)| (k.to_string(), crc32_hex(v)))
            .collect(),
    }
}

/// Write `ep` into `dir`, which must be absent or empty.
pub fn export_episode(ep: &AlignedEpisode, dir: &Path) -> Result<Manifest, DatasetError> {
    if ep.n_ticks() == 0 {
        return Err(DatasetError::EmptyEpisode);
    }
    ep.check_shape().map_err(DatasetError::BadShape)?;
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                return Err(DatasetError::DirNotEmpty(dir.to_path_buf()));
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        Err(e) => return Err(io_err(dir)(e)),
    }
    let blobs = encode_blobs(ep);
    for (name, file) in BLOBS {
        let path = dir.join(file);
        fs::write(&path, &blobs[name]).map_err(io_err(&path))?;
    }
    let manifest = build_manifest(ep, &blobs);
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Parse a manifest, checking the version before the schema.
pub fn parse_manifest(text: &str) -> Result<Manifest, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DatasetError::BadManifest(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(found) => return Err(DatasetError::VersionMismatch { found }),
        None => return Err(DatasetError::BadManifest("missing format_version".into())),
    }
    serde_json::from_value(value).map_err(|e| DatasetError::BadManifest(e.to_string()))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse_manifest(&text)
}

/// Check one blob's length (fixed-record blobs) and then its CRC-32.
pub fn verify_blob(manifest: &Manifest, name: &str, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(rec) = record_len(name) {
        let expected = rec * manifest.n_ticks;
        if bytes.len() != expected {
            return Err(DatasetError::Truncated {
                blob: name.to_string(),
                found: bytes.len(),
                expected,
            });
        }
    }
    match manifest.checksums.get(name) {
        Some(sum) if *sum == crc32_hex(bytes) => Ok(()),
        Some(_) => Err(DatasetError::BadChecksum(name.to_string())),
        None => Err(DatasetError::BadManifest(format!("no checksum for blob {name:?}"))),
    }
}

fn f64_at(bytes: &[u8], i: usize) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[8 * i..8 * i + 8]);
    f64::from_le_bytes(b)
}

fn invalid(blob: &str, tick: usize, field: &str, detail: impl fmt::Display) -> DatasetError {
    DatasetError::InvalidValue {
        blob: blob.into(),
        tick,
        field: field.into(),
        detail: detail.to_string(),
    }
}

/// Rebuild an episode from verified blob bytes.
pub fn decode_episode(
    manifest: &Manifest,
    blobs: &BTreeMap<&str, Vec<u8>>,
) -> Result<AlignedEpisode, DatasetError> {
    for (name, _) in BLOBS {
        let bytes = blobs
            .get(name)
            .ok_or_else(|| DatasetError::BadManifest(format!("blob {name:?} missing")))?;
        verify_blob(manifest, name, bytes)?;
    }
    let n = manifest.n_ticks;
    if n == 0 {
        return Err(DatasetError::EmptyEpisode);
    }
    let width_max = manifest.rig.width_calib.width_max;
    let ceiling = manifest.rig.tactile.count_ceiling;

    let tb = &blobs["timeline"];
    let timeline = (0..n)
        .map(|k| Timestamp::master(f64_at(tb, k)).map_err(|e| invalid("timeline", k, "t", e)))
        .collect::<Result<Vec<_>, _>>()?;

    let pb = &blobs["poses"];
    let poses = (0..n)
        .map(|k| {
            let v: Vec<f64> = (0..7).map(|j| f64_at(pb, 7 * k + j)).collect();
            let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
            if norm.is_nan() || (norm - 1.0).abs() > QUAT_NORM_TOL {
                return Err(invalid("poses", k, "quaternion", format!("norm {norm}")));
            }
            PoseSample::from_wxyz(
                timeline[k],
                PoseFrame::Tcp,
                [v[0], v[1], v[2]],
                [v[3], v[4], v[5], v[6]],
            )
            .map_err(|e| invalid("poses", k, "translation", e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let wb = &blobs["width"];
    let widths = (0..n)
        .map(|k| {
            WidthSample::new(timeline[k], f64_at(wb, k), width_max)
                .map_err(|e| invalid("width", k, "width", e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let tac = &blobs["tactile"];
    let vb = &blobs["tactile_valid"];
    let mut tactile_left = Vec::with_capacity(n);
    let mut tactile_right = Vec::with_capacity(n);
    for k in 0..n {
        for (side, jaw) in [Jaw::Left, Jaw::Right].into_iter().enumerate() {
            let base = (2 * k + side) * TAXELS * 2;
            let cells: Vec<u16> = tac[base..base + TAXELS * 2]
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            let grid = TactileGrid::from_slice(&cells, ceiling)
                .map_err(|e| invalid("tactile", k, "count", e))?;
            let valid = match vb[2 * k + side] {
                0 => false,
                1 => true,
                b => return Err(invalid("tactile_valid", k, "valid", format!("byte {b}"))),
            };
            let at = AlignedTactile {
                frame: TactileFrame::new(timeline[k], jaw, grid),
                valid,
            };
            if jaw == Jaw::Left {
                tactile_left.push(at);
            } else {
                tactile_right.push(at);
            }
        }
    }

    let labels = blobs["labels"]
        .iter()
        .enumerate()
        .map(|(k, &b)| Label::from_u8(b).ok_or_else(|| invalid("labels", k, "label", format!("value {b}"))))
        .collect::<Result<Vec<_>, _>>()?;

    let seg_recs: Vec<SegmentRecord> = serde_json::from_slice(&blobs["segments"])
        .map_err(|e| DatasetError::BadManifest(format!("segments.json: {e}")))?;
    let segments = seg_recs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seg = || -> Result<Segment, crate::model::ModelError> {
                Segment::new(Timestamp::master(s.t_start)?, Timestamp::master(s.t_end)?, s.label)
            };
            seg().map_err(|e| invalid("segments", i, "segment", e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let ev_recs: Vec<EventFull> = serde_json::from_slice(&blobs["events"])
        .map_err(|e| DatasetError::BadManifest(format!("events.json: {e}")))?;
    let events = ev_recs
        .into_iter()
        .map(|e| {
            if e.tick >= n {
                return Err(invalid("events", e.tick, "tick", "beyond timeline"));
            }
            let t = Timestamp::master(e.t).map_err(|err| invalid("events", e.tick, "t", err))?;
            Ok(EpisodeEvent {
                name: e.name,
                tick: e.tick,
                t,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    if manifest.frames.len() != n {
        return Err(DatasetError::BadManifest(format!(
            "{} frame entries for {n} ticks",
            manifest.frames.len()
        )));
    }
    let frames = manifest
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| match f {
            None => Ok(None),
            Some(f) => Ok(Some(FrameRef {
                t: Timestamp::master(f.t).map_err(|e| invalid("manifest", k, "frame.t", e))?,
                index: f.index,
                uri: f.uri.clone(),
            })),
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;

    Ok(AlignedEpisode {
        meta: EpisodeMeta {
            episode_id: manifest.episode_id.clone(),
            rate_hz: manifest.rate_hz,
            master: manifest.master,
            devices: manifest.devices.clone(),
            policy: manifest.policy,
            rig: manifest.rig.clone(),
        },
        timeline,
        poses,
        widths,
        tactile_left,
        tactile_right,
        labels,
        frames,
        segments,
        events,
    })
}

/// Load an exported episode, verifying blob lengths and checksums.
pub fn load_episode(dir: &Path) -> Result<AlignedEpisode, DatasetError> {
    let manifest = read_manifest(dir)?;
    let mut blobs = BTreeMap::new();
    for (name, file) in BLOBS {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        verify_blob(&manifest, name, &bytes)?;
        blobs.insert(name, bytes);
    }
    decode_episode(&manifest, &blobs)
}

/// One problem found by [`validate_episode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub blob: String,
    pub tick: Option<usize>,
    pub field: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tick {
            Some(t) => write!(f, "{} tick {} {}: {}", self.blob, t, self.field, self.detail),
            None => write!(f, "{} {}: {}", self.blob, self.field, self.detail),
        }
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn add(&mut self, blob: &str, tick: Option<usize>, field: &str, detail: impl fmt::Display) {
        self.0.push(Violation {
            blob: blob.into(),
            tick,
            field: field.into(),
            detail: detail.to_string(),
        });
    }
}

/// Semantic checks over an episode directory. Checksums are not verified
/// here (that is [`load_episode`]'s job), so each corrupted value is reported
/// on its own.
pub fn validate_episode(dir: &Path) -> Vec<Violation> {
    let mut r = Report(Vec::new());
    let manifest = match read_manifest(dir) {
        Ok(m) => m,
        Err(e) => {
            r.add("manifest", None, "manifest", e);
            return r.0;
        }
    };
    let n = manifest.n_ticks;
    if n == 0 {
        r.add("manifest", None, "n_ticks", "episode has no ticks");
    }
    if !(manifest.rate_hz.is_finite() && manifest.rate_hz > 0.0) {
        r.add("manifest", None, "rate_hz", format!("{} is not positive", manifest.rate_hz));
    }
    if manifest.frames.len() != n {
        r.add("manifest", None, "frames", format!("{} entries for {n} ticks", manifest.frames.len()));
    }
    for e in &manifest.events {
        if e.tick >= n {
            r.add("manifest", Some(e.tick), "event", format!("{} beyond timeline", e.name));
        }
    }

    let mut blobs: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for (name, file) in BLOBS {
        match fs::read(dir.join(file)) {
            Ok(bytes) => {
                if let Some(rec) = record_len(name) {
                    if bytes.len() != rec * n {
                        r.add(name, None, "length", format!("{} bytes, expected {}", bytes.len(), rec * n));
                        continue;
                    }
                }
                blobs.insert(name, bytes);
            }
            Err(e) => r.add(name, None, "file", e),
        }
    }

    let mut timeline = Vec::new();
    if let Some(tb) = blobs.get("timeline") {
        timeline = (0..n).map(|k| f64_at(tb, k)).collect();
        let t0 = timeline.first().copied().unwrap_or(0.0);
        for (k, &t) in timeline.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0) {
                r.add("timeline", Some(k), "t", format!("{t} is not a valid time"));
            } else if k > 0 && t <= timeline[k - 1] {
                r.add("timeline", Some(k), "t", "not strictly increasing");
            } else if (t - grid_time(t0, k, manifest.rate_hz)).abs() > GRID_TOL {
                r.add("timeline", Some(k), "t", "off the uniform grid");
            }
        }
    }
    if let Some(pb) = blobs.get("poses") {
        for k in 0..n {
            let v: Vec<f64> = (0..7).map(|j| f64_at(pb, 7 * k + j)).collect();
            if !v[..3].iter().all(|x| x.is_finite()) {
                r.add("poses", Some(k), "translation", "non-finite");
            }
            let norm = v[3..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm.is_nan() || (norm - 1.0).abs() > QUAT_NORM_TOL {
                r.add("poses", Some(k), "quaternion", format!("norm {norm}"));
            }
        }
    }
    if let Some(wb) = blobs.get("width") {
        let max = manifest.rig.width_calib.width_max;
        for k in 0..n {
            let w = f64_at(wb, k);
            if !(w.is_finite() && (0.0..=max).contains(&w)) {
                r.add("width", Some(k), "width", format!("{w} outside [0, {max}]"));
            }
        }
    }
    if let Some(tb) = blobs.get("tactile") {
        let ceiling = manifest.rig.tactile.count_ceiling;
        for (i, c) in tb.chunks_exact(2).enumerate() {
            let v = u16::from_le_bytes([c[0], c[1]]);
            if v > ceiling {
                r.add("tactile", Some(i / (2 * TAXELS)), "count", format!("cell {} = {v} > {ceiling}", i % (2 * TAXELS)));
            }
        }
    }
    if let Some(vb) = blobs.get("tactile_valid") {
        for (i, &b) in vb.iter().enumerate() {
            if b > 1 {
                r.add("tactile_valid", Some(i / 2), "valid", format!("value {b}"));
            }
        }
    }
    if let Some(lb) = blobs.get("labels") {
        for (k, &b) in lb.iter().enumerate() {
            if Label::from_u8(b).is_none() {
                r.add("labels", Some(k), "label", format!("value {b} not in {{0, 1}}"));
            }
        }
    }
    if let Some(sb) = blobs.get("segments") {
        match serde_json::from_slice::<Vec<SegmentRecord>>(sb) {
            Err(e) => r.add("segments", None, "json", e),
            Ok(segs) => {
                for (i, s) in segs.iter().enumerate() {
                    if s.t_start >= s.t_end {
                        r.add("segments", Some(i), "segment", "empty or reversed");
                    }
                    if i > 0 && segs[i - 1].t_end != s.t_start {
                        r.add("segments", Some(i), "segment", "not contiguous with predecessor");
                    }
                }
                if let (Some(first), Some(&t0)) = (segs.first(), timeline.first()) {
                    if first.t_start != t0 {
                        r.add("segments", Some(0), "t_start", "does not start at the first tick");
                    }
                }
            }
        }
    }
    if let Some(eb) = blobs.get("events") {
        match serde_json::from_slice::<Vec<EventFull>>(eb) {
            Err(e) => r.add("events", None, "json", e),
            Ok(evs) => {
                for e in evs {
                    if e.tick >= n {
                        r.add("events", Some(e.tick), "tick", format!("{} beyond timeline", e.name));
                    }
                }
            }
        }
    }
    r.0
}

/// Ticks `[start, start + n)` of an episode; segments are clipped to the
/// window and events outside it dropped.
pub fn slice_window(ep: &AlignedEpisode, start: usize, n: usize) -> Result<AlignedEpisode, DatasetError> {
    let total = ep.n_ticks();
    if n == 0 || start.checked_add(n).is_none_or(|end| end > total) {
        return Err(DatasetError::OutOfRange {
            start,
            n,
            n_ticks: total,
        });
    }
    let end = start + n;
    let t0 = ep.timeline[0].secs();
    let (ws, we) = (ep.timeline[start].secs(), grid_time(t0, end, ep.meta.rate_hz));
    let segments = ep
        .segments
        .iter()
        .filter_map(|s| {
            let a = s.t_start().secs().max(ws);
            let b = s.t_end().secs().min(we);
            if a < b {
                Some(Segment::new(
                    Timestamp::new(a, s.t_start().clock()).ok()?,
                    Timestamp::new(b, s.t_end().clock()).ok()?,
                    s.label(),
                ))
            } else {
                None
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DatasetError::BadShape(e.to_string()))?;
    let events = ep
        .events
        .iter()
        .filter(|e| (start..end).contains(&e.tick))
        .map(|e| EpisodeEvent {
            name: e.name.clone(),
            tick: e.tick - start,
            t: e.t,
        })
        .collect();
    Ok(AlignedEpisode {
        meta: ep.meta.clone(),
        timeline: ep.timeline[start..end].to_vec(),
        poses: ep.poses[start..end].to_vec(),
        widths: ep.widths[start..end].to_vec(),
        tactile_left: ep.tactile_left[start..end].to_vec(),
        tactile_right: ep.tactile_right[start..end].to_vec(),
        labels: ep.labels[start..end].to_vec(),
        frames: ep.frames[start..end].to_vec(),
        segments,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Clock;
    use crate::sync::EpisodeMeta;

    fn m(s: f64) -> Timestamp {
        Timestamp::master(s).unwrap()
    }

    /// Synthetic episode with a Coarse→Fine→Coarse label pattern.
    pub(crate) fn toy_episode(n: usize, fine: std::ops::Range<usize>) -> AlignedEpisode {
        let rate = 10.0;
        let timeline: Vec<Timestamp> = (0..n).map(|k| m(grid_time(1.0, k, rate))).collect();
        let poses = timeline
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let a = 0.01 * k as f64;
                PoseSample::from_wxyz(t, PoseFrame::Tcp, [0.1 * a, -a, 0.3], [a.cos(), 0.0, a.sin(), 0.0])
                    .unwrap()
            })
            .collect();
        let widths = timeline
            .iter()
            .enumerate()
            .map(|(k, &t)| WidthSample::new(t, 0.001 * (k % 70) as f64, 0.08).unwrap())
            .collect();
        let tac = |jaw: Jaw| {
            timeline
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let mut cells = [0u16; TAXELS];
                    cells[k % TAXELS] = (k % 1024) as u16;
                    AlignedTactile {
                        frame: TactileFrame::new(t, jaw, TactileGrid::new(cells, 1023).unwrap()),
                        valid: k % 7 != 3,
                    }
                })
                .collect::<Vec<_>>()
        };
        let labels: Vec<Label> = (0..n)
            .map(|k| if fine.contains(&k) { Label::Fine } else { Label::Coarse })
            .collect();
        let end = m(grid_time(1.0, n, rate));
        let mut segments = Vec::new();
        let mut cursor = 0;
        for (a, b, l) in [(0, fine.start, Label::Coarse), (fine.start, fine.end, Label::Fine)] {
            if a < b {
                segments.push(Segment::new(m(grid_time(1.0, a, rate)), m(grid_time(1.0, b, rate)), l).unwrap());
                cursor = b;
            }
        }
        if cursor < n {
            segments.push(Segment::new(m(grid_time(1.0, cursor, rate)), end, Label::Coarse).unwrap());
        }
        let mut meta = EpisodeMeta::new(rate, AlignmentPolicy::default(), Rig::default());
        meta.episode_id = "toy".into();
        meta.devices = vec![DeviceOffset {
            id: DeviceId::new("cam").unwrap(),
            offset: 0.0,
        }];
        let (tactile_left, tactile_right) = (tac(Jaw::Left), tac(Jaw::Right));
        AlignedEpisode {
            meta,
            frames: timeline
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    (k % 5 != 0).then(|| FrameRef {
                        t,
                        index: k as u64,
                        uri: format!("frames/{k:06}.png"),
                    })
                })
                .collect(),
            events: vec![EpisodeEvent {
                name: "initial_pose".into(),
                tick: 0,
                t: timeline[0],
            }],
            timeline,
            poses,
            widths,
            tactile_left,
            tactile_right,
            labels,
            segments,
        }
    }

    fn write_f64(dir: &Path, file: &str, index: usize, v: f64) {
        let path = dir.join(file);
        let mut b = fs::read(&path).unwrap();
        b[8 * index..8 * index + 8].copy_from_slice(&v.to_le_bytes());
        fs::write(path, b).unwrap();
    }

    #[test]
    fn empty_episode_rejected_before_write() {
        let mut ep = toy_episode(3, 1..2);
        ep.timeline.clear();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        assert!(matches!(export_episode(&ep, &out), Err(DatasetError::EmptyEpisode)));
        assert!(!out.exists());
    }

    #[test]
    fn export_load_round_trip() {
        let ep = toy_episode(100, 30..60);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        let manifest = export_episode(&ep, &out).unwrap();
        assert_eq!(manifest.n_ticks, 100);
        let back = load_episode(&out).unwrap();
        assert_eq!(back, ep);
        assert!(validate_episode(&out).is_empty());
        assert!(matches!(export_episode(&ep, &out), Err(DatasetError::DirNotEmpty(_))));
    }

    #[test]
    fn export_is_deterministic() {
        let ep = toy_episode(40, 10..20);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        export_episode(&ep, &a).unwrap();
        export_episode(&ep, &b).unwrap();
        for (_, file) in BLOBS.iter().chain([&("manifest", MANIFEST_FILE)]) {
            assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
        }
    }

    #[test]
    fn flipped_tactile_byte_is_bad_checksum() {
        let ep = toy_episode(20, 5..10);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        let manifest = export_episode(&ep, &out).unwrap();
        let path = out.join("tactile.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 0x01;
        assert_ne!(crc32_hex(&bytes), manifest.checksums["tactile"]);
        fs::write(&path, &bytes).unwrap();
        match load_episode(&out) {
            Err(DatasetError::BadChecksum(b)) => assert_eq!(b, "tactile"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_blob_and_version() {
        let ep = toy_episode(20, 5..10);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        export_episode(&ep, &out).unwrap();
        let path = out.join("width.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_episode(&out), Err(DatasetError::Truncated { blob, .. }) if blob == "width"));
        fs::write(&path, &bytes).unwrap();

        let mpath = out.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap();
        fs::write(&mpath, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        assert!(matches!(
            load_episode(&out),
            Err(DatasetError::VersionMismatch { found: 99 })
        ));
    }

    #[test]
    fn negative_width_is_one_violation() {
        let ep = toy_episode(20, 5..10);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        export_episode(&ep, &out).unwrap();
        write_f64(&out, "width.bin", 7, -0.01);
        let report = validate_episode(&out);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!((report[0].tick, report[0].field.as_str()), (Some(7), "width"));
    }

    #[test]
    fn label_two_is_one_violation() {
        let ep = toy_episode(20, 5..10);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        export_episode(&ep, &out).unwrap();
        let path = out.join("labels.bin");
        let mut b = fs::read(&path).unwrap();
        b[3] = 2;
        fs::write(&path, b).unwrap();
        let report = validate_episode(&out);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].blob, "labels");
        assert_eq!(report[0].tick, Some(3));
    }

    #[test]
    fn non_unit_quaternion_and_bad_grid_reported() {
        let ep = toy_episode(20, 5..10);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        export_episode(&ep, &out).unwrap();
        write_f64(&out, "poses.bin", 7 * 4 + 3, 2.0);
        write_f64(&out, "timeline.bin", 9, ep.timeline[9].secs() + 0.01);
        let report = validate_episode(&out);
        assert_eq!(report.len(), 2, "{report:?}");
        assert!(report.iter().any(|v| v.blob == "poses" && v.tick == Some(4)));
        assert!(report.iter().any(|v| v.blob == "timeline" && v.tick == Some(9)));
    }

    #[test]
    fn windows() {
        let ep = toy_episode(100, 30..60);
        assert_eq!(slice_window(&ep, 0, 100).unwrap(), ep);
        let w = slice_window(&ep, 10, 5).unwrap();
        assert_eq!(w.n_ticks(), 5);
        assert!(w.check_shape().is_ok());
        assert_eq!(w.poses.len(), 5);
        assert!(matches!(slice_window(&ep, 96, 5), Err(DatasetError::OutOfRange { .. })));
        assert!(matches!(slice_window(&ep, 0, 0), Err(DatasetError::OutOfRange { .. })));

        let w = slice_window(&ep, 25, 10).unwrap();
        assert_eq!(w.segments.len(), 2);
        assert_eq!(
            (w.segments[0].label(), w.segments[1].label()),
            (Label::Coarse, Label::Fine)
        );
        assert_eq!(w.segments[0].t_end(), ep.timeline[30]);
        let total: f64 = w.segments.iter().map(|s| s.len_secs()).sum();
        let span = grid_time(1.0, 35, 10.0) - grid_time(1.0, 25, 10.0);
        assert!((total - span).abs() < 1e-12);
        assert!(w.events.is_empty());
        assert_eq!(w.segments[0].t_start().clock(), Clock::Master);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn adjacent_windows_concatenate(n in 2usize..200, cut_frac in 0.0f64..1.0, a in 0usize..50, b in 0usize..50) {
                let fine = a.min(n - 1)..(a + b).min(n);
                let ep = toy_episode(n, fine);
                let cut = 1 + ((n - 1) as f64 * cut_frac) as usize;
                let cut = cut.min(n - 1);
                let left = slice_window(&ep, 0, cut).unwrap();
                let right = slice_window(&ep, cut, n - cut).unwrap();
                let joined: Vec<_> = left.labels.iter().chain(&right.labels).copied().collect();
                prop_assert_eq!(joined, ep.labels.clone());
                let joined: Vec<_> = left.timeline.iter().chain(&right.timeline).copied().collect();
                prop_assert_eq!(joined, ep.timeline.clone());
                let joined: Vec<_> = left.tactile_right.iter().chain(&right.tactile_right).cloned().collect();
                prop_assert_eq!(joined, ep.tactile_right.clone());
            }

            #[test]
            fn any_single_byte_flip_is_detected(n in 1usize..30, blob_idx in 0usize..8, pos in any::<prop::sample::Index>(), bit in 0u8..8) {
                let ep = toy_episode(n, 0..n / 2);
                let blobs = encode_blobs(&ep);
                let manifest = build_manifest(&ep, &blobs);
                let name = BLOBS[blob_idx].0;
                let mut bytes = blobs[name].clone();
                let i = pos.index(bytes.len());
                bytes[i] ^= 1 << bit;
                prop_assert!(matches!(verify_blob(&manifest, name, &bytes), Err(DatasetError::BadChecksum(b)) if b == name));
            }
        }
    }
}
