//! Shared domain types: timestamps on named clocks, tactile frames, poses,
//! widths, button edges, segments and the raw per-device episode bundle.
//!
//! Every validated type keeps its fields private so an out-of-range value
//! cannot be built through the public surface.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ingest::MarkerObservation;

pub const TAXEL_ROWS: usize = 16;
pub const TAXEL_COLS: usize = 16;
pub const TAXELS: usize = TAXEL_ROWS * TAXEL_COLS;
/// 10-bit ADC ceiling of the tactile reader.
pub const DEFAULT_COUNT_CEILING: u16 = 1023;
pub const DEFAULT_WIDTH_MAX: f64 = 0.08;

/// Tolerance on |q| accepted by [`PoseSample`] invariants.
pub const UNIT_QUAT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("timestamp {0} is not finite and non-negative")]
    BadTimestamp(f64),
    #[error("timestamps on different clocks ({0} vs {1})")]
    ClockMismatch(Clock, Clock),
    #[error("tactile cell {cell} holds {value}, above ceiling {ceiling}")]
    CountOutOfRange { cell: usize, value: u16, ceiling: u16 },
    #[error("tactile grid has {0} cells, expected {TAXELS}")]
    BadGridShape(usize),
    #[error("quaternion cannot be normalized (norm {0})")]
    DegenerateQuaternion(f64),
    #[error("translation is not finite")]
    NonFiniteTranslation,
    #[error("width {width} outside [0, {max}]")]
    WidthOutOfRange { width: f64, max: f64 },
    #[error("segment end {end} is not after start {start}")]
    EmptySegment { start: f64, end: f64 },
    #[error("button edge {0} breaks Press/Release alternation")]
    NonAlternating(usize),
    #[error("timestamps not strictly increasing at index {0}")]
    NonMonotonic(usize),
    #[error("at least two samples are required")]
    TooFewSamples,
    #[error("episode has no samples")]
    EmptyEpisode,
    #[error("invalid device id {0:?}")]
    BadDeviceId(String),
}

/// Short device identifier such as `cam` or `mcu`, stored inline so that
/// timestamps stay `Copy`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId {
    len: u8,
    buf: [u8; DeviceId::MAX_LEN],
}

impl DeviceId {
    pub const MAX_LEN: usize = 15;

    pub fn new(name: &str) -> Result<Self, ModelError> {
        let bytes = name.as_bytes();
        let ok = !bytes.is_empty()
            && bytes.len() <= Self::MAX_LEN
            && bytes
                .iter()
                .all(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-');
        if !ok {
            return Err(ModelError::BadDeviceId(name.to_string()));
        }
        let mut buf = [0u8; Self::MAX_LEN];
        buf[..bytes.len()].copy_from_slice(bytes);
        Ok(Self {
            len: bytes.len() as u8,
            buf,
        })
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII is admitted by `new`.
        std::str::from_utf8(&self.buf[..self.len as usize]).unwrap_or("")
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({:?})", self.as_str())
    }
}

impl FromStr for DeviceId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DeviceId::new(&s).map_err(serde::de::Error::custom)
    }
}

/// The timebase a timestamp is expressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Clock {
    Master,
    Local(DeviceId),
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clock::Master => f.write_str("master"),
            Clock::Local(d) => write!(f, "local:{d}"),
        }
    }
}

/// Seconds on a named clock. Ordering is only defined between timestamps on
/// the same clock; `partial_cmp` yields `None` across clocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestamp {
    secs: f64,
    clock: Clock,
}

impl Timestamp {
    pub fn new(secs: f64, clock: Clock) -> Result<Self, ModelError> {
        if !secs.is_finite() || secs < 0.0 {
            return Err(ModelError::BadTimestamp(secs));
        }
        Ok(Self { secs, clock })
    }

    pub fn master(secs: f64) -> Result<Self, ModelError> {
        Self::new(secs, Clock::Master)
    }

    pub fn secs(&self) -> f64 {
        self.secs
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    /// Re-express on `clock` after subtracting `offset` seconds.
    pub fn rebased(&self, offset: f64, clock: Clock) -> Result<Self, ModelError> {
        Self::new(self.secs - offset, clock)
    }

    pub fn try_cmp(&self, other: &Timestamp) -> Result<Ordering, ModelError> {
        if self.clock != other.clock {
            return Err(ModelError::ClockMismatch(self.clock, other.clock));
        }
        Ok(self.secs.total_cmp(&other.secs))
    }

    pub fn same_clock(&self, other: &Timestamp) -> Result<(), ModelError> {
        if self.clock == other.clock {
            Ok(())
        } else {
            Err(ModelError::ClockMismatch(self.clock, other.clock))
        }
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.clock != other.clock {
            return None;
        }
        self.secs.partial_cmp(&other.secs)
    }
}

/// Tick `k` of a uniform grid. Every producer of grid times goes through
/// here so that coincident samples compare bit-equal.
pub fn grid_time(t0: f64, k: usize, rate_hz: f64) -> f64 {
    t0 + k as f64 / rate_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Jaw {
    Left,
    Right,
}

impl Jaw {
    pub fn as_u8(self) -> u8 {
        match self {
            Jaw::Left => 0,
            Jaw::Right => 1,
        }
    }

    pub fn from_u8(b: u8) -> Option<Jaw> {
        match b {
            0 => Some(Jaw::Left),
            1 => Some(Jaw::Right),
            _ => None,
        }
    }
}

/// 16×16 raw counts, row-major, row 0 nearest the gripper base.
#[derive(Clone, PartialEq, Eq)]
pub struct TactileGrid([u16; TAXELS]);

impl TactileGrid {
    pub fn zeros() -> Self {
        Self([0; TAXELS])
    }

    pub fn new(cells: [u16; TAXELS], ceiling: u16) -> Result<Self, ModelError> {
        if let Some((cell, &value)) = cells.iter().enumerate().find(|(_, v)| **v > ceiling) {
            return Err(ModelError::CountOutOfRange {
                cell,
                value,
                ceiling,
            });
        }
        Ok(Self(cells))
    }

    pub fn from_slice(cells: &[u16], ceiling: u16) -> Result<Self, ModelError> {
        let arr: [u16; TAXELS] = cells
            .try_into()
            .map_err(|_| ModelError::BadGridShape(cells.len()))?;
        Self::new(arr, ceiling)
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.0[row * TAXEL_COLS + col]
    }

    pub fn cells(&self) -> &[u16; TAXELS] {
        &self.0
    }

    pub fn sum(&self) -> u64 {
        self.0.iter().map(|&v| v as u64).sum()
    }
}

impl fmt::Debug for TactileGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let active = self.0.iter().filter(|v| **v > 0).count();
        write!(f, "TactileGrid {{ active: {active}, sum: {} }}", self.sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    t: Timestamp,
    jaw: Jaw,
    grid: TactileGrid,
}

impl TactileFrame {
    pub fn new(t: Timestamp, jaw: Jaw, grid: TactileGrid) -> Self {
        Self { t, jaw, grid }
    }

    pub fn zeros(t: Timestamp, jaw: Jaw) -> Self {
        Self::new(t, jaw, TactileGrid::zeros())
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }

    pub fn jaw(&self) -> Jaw {
        self.jaw
    }

    pub fn grid(&self) -> &TactileGrid {
        &self.grid
    }

    pub fn with_time(&self, t: Timestamp) -> Self {
        Self {
            t,
            jaw: self.jaw,
            grid: self.grid.clone(),
        }
    }
}

/// Coordinate frame a pose is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFrame {
    Camera,
    Tcp,
    World,
}

impl fmt::Display for PoseFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoseFrame::Camera => "camera",
            PoseFrame::Tcp => "tcp",
            PoseFrame::World => "world",
        })
    }
}

/// Scale `q` to unit norm. A quaternion already within a few ulps of unit
/// norm is returned untouched, which makes the operation idempotent
/// bit-for-bit.
pub fn normalize_quat(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, ModelError> {
    let n2 = q.norm_squared();
    if !n2.is_finite() || n2 < 1e-24 {
        return Err(ModelError::DegenerateQuaternion(n2.sqrt()));
    }
    if (n2 - 1.0).abs() <= 8.0 * f64::EPSILON {
        return Ok(UnitQuaternion::new_unchecked(q));
    }
    Ok(UnitQuaternion::new_unchecked(q / n2.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    t: Timestamp,
    frame: PoseFrame,
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

impl PoseSample {
    /// `rotation` is renormalized; a zero or non-finite quaternion is rejected.
    pub fn new(
        t: Timestamp,
        frame: PoseFrame,
        translation: Vector3<f64>,
        rotation: Quaternion<f64>,
    ) -> Result<Self, ModelError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteTranslation);
        }
        Ok(Self {
            t,
            frame,
            translation,
            rotation: normalize_quat(rotation)?,
        })
    }

    /// Build from `(w, x, y, z)`.
    pub fn from_wxyz(
        t: Timestamp,
        frame: PoseFrame,
        translation: [f64; 3],
        wxyz: [f64; 4],
    ) -> Result<Self, ModelError> {
        Self::new(
            t,
            frame,
            Vector3::from(translation),
            Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]),
        )
    }

    pub fn identity(t: Timestamp, frame: PoseFrame) -> Self {
        Self {
            t,
            frame,
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }

    pub fn frame(&self) -> PoseFrame {
        self.frame
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn with_time(&self, t: Timestamp) -> Self {
        Self { t, ..self.clone() }
    }

    pub fn with_frame(&self, frame: PoseFrame) -> Self {
        Self {
            frame,
            ..self.clone()
        }
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthSample {
    t: Timestamp,
    width: f64,
}

impl WidthSample {
    pub fn new(t: Timestamp, width: f64, width_max: f64) -> Result<Self, ModelError> {
        if !(width.is_finite() && (0.0..=width_max).contains(&width)) {
            return Err(ModelError::WidthOutOfRange {
                width,
                max: width_max,
            });
        }
        Ok(Self { t, width })
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    Press,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButtonEvent {
    pub t: Timestamp,
    pub edge: Edge,
}

impl ButtonEvent {
    pub fn press(t: Timestamp) -> Self {
        Self {
            t,
            edge: Edge::Press,
        }
    }

    pub fn release(t: Timestamp) -> Self {
        Self {
            t,
            edge: Edge::Release,
        }
    }
}

/// Check the log-level invariants of a button trace: strictly increasing
/// times, edges alternating from `Press`.
pub fn check_button_events(events: &[ButtonEvent]) -> Result<(), ModelError> {
    for (i, e) in events.iter().enumerate() {
        let expected = if i % 2 == 0 { Edge::Press } else { Edge::Release };
        if e.edge != expected {
            return Err(ModelError::NonAlternating(i));
        }
        if i > 0 && events[i - 1].t.try_cmp(&e.t)? != Ordering::Less {
            return Err(ModelError::NonMonotonic(i));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Coarse,
    Fine,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Coarse => 0,
            Label::Fine => 1,
        }
    }

    pub fn from_u8(b: u8) -> Option<Label> {
        match b {
            0 => Some(Label::Coarse),
            1 => Some(Label::Fine),
            _ => None,
        }
    }
}

/// Half-open labeled interval `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    t_start: Timestamp,
    t_end: Timestamp,
    label: Label,
}

impl Segment {
    pub fn new(t_start: Timestamp, t_end: Timestamp, label: Label) -> Result<Self, ModelError> {
        if t_start.try_cmp(&t_end)? != Ordering::Less {
            return Err(ModelError::EmptySegment {
                start: t_start.secs(),
                end: t_end.secs(),
            });
        }
        Ok(Self {
            t_start,
            t_end,
            label,
        })
    }

    pub fn t_start(&self) -> Timestamp {
        self.t_start
    }

    pub fn t_end(&self) -> Timestamp {
        self.t_end
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn len_secs(&self) -> f64 {
        self.t_end.secs() - self.t_start.secs()
    }
}

/// Opaque pointer to an externally stored camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub t: Timestamp,
    pub index: u64,
    pub uri: String,
}

/// Bundle of per-device logs, each on its own clock until offsets are applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawEpisode {
    /// SLAM trajectory in the camera frame.
    pub trajectory: Vec<PoseSample>,
    pub tactile_left: Vec<TactileFrame>,
    pub tactile_right: Vec<TactileFrame>,
    pub buttons: Vec<ButtonEvent>,
    pub markers: Vec<MarkerObservation>,
    pub frames: Vec<FrameRef>,
    /// Each device's local time of the shared sync pulse.
    pub sync_markers: BTreeMap<DeviceId, Timestamp>,
}

impl RawEpisode {
    /// Every timestamp in every stream (sync markers excluded).
    pub fn stream_times(&self) -> impl Iterator<Item = Timestamp> + '_ {
        self.trajectory
            .iter()
            .map(|p| p.t())
            .chain(self.tactile_left.iter().map(|f| f.t()))
            .chain(self.tactile_right.iter().map(|f| f.t()))
            .chain(self.buttons.iter().map(|b| b.t))
            .chain(self.markers.iter().map(|m| m.t()))
            .chain(self.frames.iter().map(|f| f.t))
    }

    /// Devices whose local clock stamps at least one stream sample.
    pub fn devices(&self) -> BTreeSet<DeviceId> {
        self.stream_times()
            .filter_map(|t| match t.clock() {
                Clock::Local(d) => Some(d),
                Clock::Master => None,
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.stream_times().next().is_none()
    }
}

/// Earliest and latest sample over all streams. All streams must already be
/// on one clock.
pub fn episode_span(raw: &RawEpisode) -> Result<(Timestamp, Timestamp), ModelError> {
    let mut times = raw.stream_times();
    let first = times.next().ok_or(ModelError::EmptyEpisode)?;
    let (mut lo, mut hi) = (first, first);
    for t in times {
        if t.try_cmp(&lo)? == Ordering::Less {
            lo = t;
        }
        if t.try_cmp(&hi)? == Ordering::Greater {
            hi = t;
        }
    }
    Ok((lo, hi))
}

/// Mean sample rate `(n − 1) / (t_last − t_first)`.
pub fn estimate_rate(ts: &[Timestamp]) -> Result<f64, ModelError> {
    if ts.len() < 2 {
        return Err(ModelError::TooFewSamples);
    }
    for (i, w) in ts.windows(2).enumerate() {
        if w[0].try_cmp(&w[1])? != Ordering::Less {
            return Err(ModelError::NonMonotonic(i + 1));
        }
    }
    let span = ts[ts.len() - 1].secs() - ts[0].secs();
    Ok((ts.len() - 1) as f64 / span)
}
