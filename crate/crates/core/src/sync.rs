//! Clock offsets from a shared sync pulse, and resampling of every modality
//! onto one uniform master timeline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Rig;
use crate::ingest::MarkerObservation;
use crate::model::{
    episode_span, estimate_rate, grid_time, ButtonEvent, Clock, DeviceId, FrameRef, Jaw, Label,
    ModelError, PoseSample, RawEpisode, Segment, TactileFrame, Timestamp, WidthSample,
};
use crate::pose_width::{camera_to_tcp, interpolate_pose, width_from_markers, GeometryError};
use crate::segmentation::{
    debounce, label_frames, merge_short_segments, segments_from_button, SegmentError,
};

/// Grids larger than this are refused.
pub const MAX_TICKS: f64 = 1e8;
/// Marker rate assumed when too few observations exist to estimate one.
const FALLBACK_MARKER_RATE: f64 = 30.0;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("master device {0} has no sync marker")]
    MissingMaster(DeviceId),
    #[error("device {0} produced samples but has no sync marker / offset")]
    MissingDevice(DeviceId),
    #[error("episode has no samples")]
    EmptyEpisode,
    #[error("the {0} stream is empty")]
    EmptyStream(&'static str),
    #[error("rate {0} Hz is not a positive finite number")]
    BadRate(f64),
    #[error("grid of {ticks} ticks at {rate} Hz exceeds the {MAX_TICKS} tick limit")]
    RateOutOfRange { rate: f64, ticks: f64 },
    #[error("stream sample on clock {0} where master time was expected")]
    NotOnMaster(Clock),
    #[error("invalid alignment policy: {0}")]
    BadPolicy(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

/// `master_time = local_time − offset` per device; the master's offset is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockOffsets {
    master: DeviceId,
    offsets: BTreeMap<DeviceId, f64>,
}

impl ClockOffsets {
    pub fn new(master: DeviceId, offsets: BTreeMap<DeviceId, f64>) -> Result<Self, SyncError> {
        match offsets.get(&master) {
            Some(0.0) => Ok(Self { master, offsets }),
            Some(_) => Err(SyncError::BadPolicy(format!("master {master} must have offset 0"))),
            None => Err(SyncError::MissingMaster(master)),
        }
    }

    pub fn master(&self) -> DeviceId {
        self.master
    }

    pub fn get(&self, d: DeviceId) -> Option<f64> {
        self.offsets.get(&d).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DeviceId, f64)> + '_ {
        self.offsets.iter().map(|(d, o)| (*d, *o))
    }
}

/// Offsets from each device's local time of the shared sync pulse.
pub fn estimate_offsets(
    sync_markers: &BTreeMap<DeviceId, Timestamp>,
    master: DeviceId,
) -> Result<ClockOffsets, SyncError> {
    let reference = sync_markers
        .get(&master)
        .ok_or(SyncError::MissingMaster(master))?
        .secs();
    let offsets = sync_markers
        .iter()
        .map(|(d, t)| (*d, if *d == master { 0.0 } else { t.secs() - reference }))
        .collect();
    ClockOffsets::new(master, offsets)
}

/// [`estimate_offsets`] plus a check that every device stamping a stream
/// has a sync marker.
pub fn estimate_episode_offsets(raw: &RawEpisode, master: DeviceId) -> Result<ClockOffsets, SyncError> {
    let offsets = estimate_offsets(&raw.sync_markers, master)?;
    if let Some(d) = raw.devices().into_iter().find(|d| offsets.get(*d).is_none()) {
        return Err(SyncError::MissingDevice(d));
    }
    Ok(offsets)
}

fn to_master(t: Timestamp, offsets: &ClockOffsets) -> Result<Timestamp, SyncError> {
    match t.clock() {
        Clock::Master => Ok(t),
        Clock::Local(d) => {
            let off = offsets.get(d).ok_or(SyncError::MissingDevice(d))?;
            Ok(t.rebased(off, Clock::Master)?)
        }
    }
}

/// Re-express every timestamp (sync markers included) on the master clock.
pub fn apply_offsets(raw: &RawEpisode, offsets: &ClockOffsets) -> Result<RawEpisode, SyncError> {
    let conv = |t: Timestamp| to_master(t, offsets);
    Ok(RawEpisode {
        trajectory: raw
            .trajectory
            .iter()
            .map(|p| Ok(p.with_time(conv(p.t())?)))
            .collect::<Result<_, SyncError>>()?,
        tactile_left: raw
            .tactile_left
            .iter()
            .map(|f| Ok(f.with_time(conv(f.t())?)))
            .collect::<Result<_, SyncError>>()?,
        tactile_right: raw
            .tactile_right
            .iter()
            .map(|f| Ok(f.with_time(conv(f.t())?)))
            .collect::<Result<_, SyncError>>()?,
        buttons: raw
            .buttons
            .iter()
            .map(|b| {
                Ok(ButtonEvent {
                    t: conv(b.t)?,
                    edge: b.edge,
                })
            })
            .collect::<Result<_, SyncError>>()?,
        markers: raw
            .markers
            .iter()
            .map(|m| Ok(m.with_time(conv(m.t())?)))
            .collect::<Result<_, SyncError>>()?,
        frames: raw
            .frames
            .iter()
            .map(|f| {
                Ok(FrameRef {
                    t: conv(f.t)?,
                    index: f.index,
                    uri: f.uri.clone(),
                })
            })
            .collect::<Result<_, SyncError>>()?,
        sync_markers: raw
            .sync_markers
            .iter()
            .map(|(d, t)| Ok((*d, conv(*t)?)))
            .collect::<Result<_, SyncError>>()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosePolicy {
    Interpolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthPolicy {
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TactilePolicy {
    NearestWithin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationPolicy {
    ZeroOrderHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePolicy {
    NearestIndex,
}

/// Per-modality resampling rules, recorded in every episode manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPolicy {
    pub pose: PosePolicy,
    pub width: WidthPolicy,
    pub tactile: TactilePolicy,
    pub annotation: AnnotationPolicy,
    pub frames: FramePolicy,
    /// Largest tactile gap (s) still counted as a valid tick.
    pub max_gap: f64,
    /// Button states shorter than this (s) are dropped as bounce.
    pub debounce: f64,
    /// Segments shorter than this (s) are absorbed; 0 disables merging.
    pub min_segment: f64,
}

impl Default for AlignmentPolicy {
    fn default() -> Self {
        Self {
            pose: PosePolicy::Interpolate,
            width: WidthPolicy::Linear,
            tactile: TactilePolicy::NearestWithin,
            annotation: AnnotationPolicy::ZeroOrderHold,
            frames: FramePolicy::NearestIndex,
            max_gap: 0.05,
            debounce: 0.05,
            min_segment: 0.0,
        }
    }
}

impl AlignmentPolicy {
    pub fn check(&self) -> Result<(), SyncError> {
        if !(self.max_gap.is_finite() && self.max_gap > 0.0) {
            return Err(SyncError::BadPolicy(format!("max_gap {} must be > 0", self.max_gap)));
        }
        if !(self.debounce.is_finite() && self.debounce >= 0.0) {
            return Err(SyncError::BadPolicy(format!("debounce {} must be >= 0", self.debounce)));
        }
        if !(self.min_segment.is_finite() && self.min_segment >= 0.0) {
            return Err(SyncError::BadPolicy(format!(
                "min_segment {} must be >= 0",
                self.min_segment
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTactile {
    pub frame: TactileFrame,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEvent {
    pub name: String,
    pub tick: usize,
    pub t: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceOffset {
    pub id: DeviceId,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    pub episode_id: String,
    pub rate_hz: f64,
    pub master: DeviceId,
    pub devices: Vec<DeviceOffset>,
    pub policy: AlignmentPolicy,
    pub rig: Rig,
}

impl EpisodeMeta {
    pub fn new(rate_hz: f64, policy: AlignmentPolicy, rig: Rig) -> Self {
        Self {
            episode_id: String::new(),
            rate_hz,
            master: crate::ingest::StreamDevices::default().camera,
            devices: Vec::new(),
            policy,
            rig,
        }
    }
}

/// All modalities on one uniform master timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEpisode {
    pub meta: EpisodeMeta,
    pub timeline: Vec<Timestamp>,
    /// TCP poses.
    pub poses: Vec<PoseSample>,
    pub widths: Vec<WidthSample>,
    pub tactile_left: Vec<AlignedTactile>,
    pub tactile_right: Vec<AlignedTactile>,
    pub labels: Vec<Label>,
    pub frames: Vec<Option<FrameRef>>,
    pub segments: Vec<Segment>,
    pub events: Vec<EpisodeEvent>,
}

impl AlignedEpisode {
    pub fn n_ticks(&self) -> usize {
        self.timeline.len()
    }

    /// End of the segmented span: one tick period past the last tick.
    pub fn span_end(&self) -> f64 {
        grid_time(
            self.timeline.first().map(|t| t.secs()).unwrap_or(0.0),
            self.n_ticks(),
            self.meta.rate_hz,
        )
    }

    /// Check that every per-tick list matches the timeline length.
    pub fn check_shape(&self) -> Result<(), String> {
        let n = self.n_ticks();
        let lens = [
            ("poses", self.poses.len()),
            ("widths", self.widths.len()),
            ("tactile_left", self.tactile_left.len()),
            ("tactile_right", self.tactile_right.len()),
            ("labels", self.labels.len()),
            ("frames", self.frames.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(format!("{name} has {len} entries, timeline has {n}"));
            }
        }
        if let Some(e) = self.events.iter().find(|e| e.tick >= n) {
            return Err(format!("event {} at tick {} beyond {n}", e.name, e.tick));
        }
        Ok(())
    }

    pub fn fine_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| **l == Label::Fine).count() as f64 / self.labels.len() as f64
    }
}

/// Source sample chosen for each tick, for auditing nearest-neighbor picks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignTrace {
    pub tactile_left: Vec<Option<usize>>,
    pub tactile_right: Vec<Option<usize>>,
    pub frames: Vec<Option<usize>>,
    /// Width samples derived from marker pairs.
    pub widths: Vec<WidthSample>,
}

/// Index of the sample nearest `t` in a sorted slice; ties go to the earlier
/// sample.
pub fn nearest_index(times: &[f64], t: f64) -> Option<usize> {
    if times.is_empty() {
        return None;
    }
    let i = times.partition_point(|&x| x <= t);
    if i == 0 {
        return Some(0);
    }
    if i == times.len() {
        return Some(times.len() - 1);
    }
    let (before, after) = (t - times[i - 1], times[i] - t);
    Some(if after < before { i } else { i - 1 })
}

fn ensure_master(t: Timestamp) -> Result<(), SyncError> {
    match t.clock() {
        Clock::Master => Ok(()),
        c => Err(SyncError::NotOnMaster(c)),
    }
}

/// Pair left/right marker observations into width samples.
pub fn widths_from_markers(
    markers: &[MarkerObservation],
    rig: &Rig,
) -> Result<Vec<WidthSample>, SyncError> {
    let ids = rig.markers;
    let left: Vec<&MarkerObservation> = markers.iter().filter(|m| m.marker_id() == ids.left).collect();
    let right: Vec<&MarkerObservation> =
        markers.iter().filter(|m| m.marker_id() == ids.right).collect();
    let left_times: Vec<Timestamp> = left.iter().map(|m| m.t()).collect();
    let rate = estimate_rate(&left_times).unwrap_or(FALLBACK_MARKER_RATE);
    let right_secs: Vec<f64> = right.iter().map(|m| m.t().secs()).collect();

    let mut out: Vec<WidthSample> = Vec::with_capacity(left.len());
    for l in &left {
        let Some(j) = nearest_index(&right_secs, l.t().secs()) else {
            break;
        };
        match width_from_markers(l, right[j], &rig.width_calib, ids, rate) {
            Ok(w) => out.push(w),
            Err(GeometryError::TimestampGap { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    out.sort_by(|a, b| a.t().secs().total_cmp(&b.t().secs()));
    out.dedup_by(|b, a| a.t().secs() == b.t().secs());
    Ok(out)
}

/// Number of grid ticks covering `[t0, t1]` at `rate_hz`.
pub fn tick_count(t0: f64, t1: f64, rate_hz: f64) -> Result<usize, SyncError> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(SyncError::BadRate(rate_hz));
    }
    let ticks = (t1 - t0) * rate_hz;
    if !ticks.is_finite() || ticks + 1.0 > MAX_TICKS {
        return Err(SyncError::RateOutOfRange {
            rate: rate_hz,
            ticks: ticks + 1.0,
        });
    }
    Ok((ticks + 1e-9).floor() as usize + 1)
}

fn align_tactile(
    frames: &[TactileFrame],
    jaw: Jaw,
    timeline: &[Timestamp],
    max_gap: f64,
) -> (Vec<AlignedTactile>, Vec<Option<usize>>) {
    let times: Vec<f64> = frames.iter().map(|f| f.t().secs()).collect();
    timeline
        .iter()
        .map(|&tick| {
            let idx = nearest_index(&times, tick.secs());
            let aligned = match idx {
                Some(i) if (times[i] - tick.secs()).abs() <= max_gap => AlignedTactile {
                    frame: frames[i].with_time(tick),
                    valid: true,
                },
                _ => AlignedTactile {
                    frame: TactileFrame::zeros(tick, jaw),
                    valid: false,
                },
            };
            (aligned, idx)
        })
        .unzip()
}

/// Resample a master-clock episode onto a uniform grid at `rate_hz`.
pub fn align(
    raw: &RawEpisode,
    rate_hz: f64,
    policy: &AlignmentPolicy,
    rig: &Rig,
) -> Result<AlignedEpisode, SyncError> {
    align_traced(raw, rate_hz, policy, rig).map(|(ep, _)| ep)
}

pub fn align_traced(
    raw: &RawEpisode,
    rate_hz: f64,
    policy: &AlignmentPolicy,
    rig: &Rig,
) -> Result<(AlignedEpisode, AlignTrace), SyncError> {
    policy.check()?;
    let (lo, hi) = match episode_span(raw) {
        Ok(s) => s,
        Err(ModelError::EmptyEpisode) => return Err(SyncError::EmptyEpisode),
        Err(e) => return Err(e.into()),
    };
    ensure_master(lo)?;
    let n = tick_count(lo.secs(), hi.secs(), rate_hz)?;
    let timeline = (0..n)
        .map(|k| Timestamp::master(grid_time(lo.secs(), k, rate_hz)))
        .collect::<Result<Vec<_>, _>>()?;

    if raw.trajectory.is_empty() {
        return Err(SyncError::EmptyStream("trajectory"));
    }
    let tcp: Vec<PoseSample> = raw
        .trajectory
        .iter()
        .map(|p| camera_to_tcp(p, &rig.extrinsic))
        .collect::<Result<_, _>>()?;
    let pose_times: Vec<f64> = tcp.iter().map(|p| p.t().secs()).collect();
    let poses = timeline
        .iter()
        .map(|&tick| {
            let i = pose_times.partition_point(|&x| x <= tick.secs());
            if i == 0 {
                Ok(tcp[0].with_time(tick))
            } else if i == tcp.len() {
                Ok(tcp[i - 1].with_time(tick))
            } else {
                interpolate_pose(&tcp[i - 1], &tcp[i], tick)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let width_samples = widths_from_markers(&raw.markers, rig)?;
    if width_samples.is_empty() {
        return Err(SyncError::EmptyStream("markers"));
    }
    let width_max = rig.width_calib.width_max;
    let width_times: Vec<f64> = width_samples.iter().map(|w| w.t().secs()).collect();
    let widths = timeline
        .iter()
        .map(|&tick| {
            let t = tick.secs();
            let i = width_times.partition_point(|&x| x <= t);
            let w = if i == 0 {
                width_samples[0].width()
            } else if i == width_samples.len() || width_times[i - 1] == t {
                width_samples[i - 1].width()
            } else {
                let (a, b) = (&width_samples[i - 1], &width_samples[i]);
                let s = (t - width_times[i - 1]) / (width_times[i] - width_times[i - 1]);
                ((1.0 - s) * a.width() + s * b.width()).clamp(0.0, width_max)
            };
            WidthSample::new(tick, w, width_max)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (tactile_left, trace_left) =
        align_tactile(&raw.tactile_left, Jaw::Left, &timeline, policy.max_gap);
    let (tactile_right, trace_right) =
        align_tactile(&raw.tactile_right, Jaw::Right, &timeline, policy.max_gap);

    let frame_times: Vec<f64> = raw.frames.iter().map(|f| f.t.secs()).collect();
    let trace_frames: Vec<Option<usize>> = timeline
        .iter()
        .map(|t| nearest_index(&frame_times, t.secs()))
        .collect();
    let frames = trace_frames
        .iter()
        .map(|i| i.map(|i| raw.frames[i].clone()))
        .collect();

    let span_end = Timestamp::master(grid_time(lo.secs(), n, rate_hz))?;
    let buttons = debounce(&raw.buttons, policy.debounce);
    let mut segments = segments_from_button(&buttons, (timeline[0], span_end))?;
    if policy.min_segment > 0.0 {
        segments = merge_short_segments(&segments, policy.min_segment)?;
    }
    let labels = label_frames(&timeline, &segments)?;

    let episode = AlignedEpisode {
        meta: EpisodeMeta::new(rate_hz, *policy, rig.clone()),
        timeline,
        poses,
        widths,
        tactile_left,
        tactile_right,
        labels,
        frames,
        segments,
        events: Vec::new(),
    };
    let trace = AlignTrace {
        tactile_left: trace_left,
        tactile_right: trace_right,
        frames: trace_frames,
        widths: width_samples,
    };
    Ok((episode, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PoseFrame, TactileGrid, TAXELS};
    use nalgebra::Vector3;

    fn dev(s: &str) -> DeviceId {
        DeviceId::new(s).unwrap()
    }

    fn m(s: f64) -> Timestamp {
        Timestamp::master(s).unwrap()
    }

    fn local(s: f64, d: &str) -> Timestamp {
        Timestamp::new(s, Clock::Local(dev(d))).unwrap()
    }

    fn rig0() -> Rig {
        Rig {
            extrinsic: crate::pose_width::Rigid::identity(),
            width_calib: crate::pose_width::WidthCalib::new(0.0, 0.08).unwrap(),
            ..Rig::default()
        }
    }

    fn markers_at(t: f64, width: f64) -> Vec<MarkerObservation> {
        vec![
            MarkerObservation::new(m(t), 7, Vector3::new(0.0, -width / 2.0, 0.1)).unwrap(),
            MarkerObservation::new(m(t), 8, Vector3::new(0.0, width / 2.0, 0.1)).unwrap(),
        ]
    }

    fn tactile_at(times: &[f64], jaw: Jaw) -> Vec<TactileFrame> {
        times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mut cells = [0u16; TAXELS];
                cells[0] = k as u16 + 1;
                TactileFrame::new(m(t), jaw, TactileGrid::new(cells, 1023).unwrap())
            })
            .collect()
    }

    #[test]
    fn offsets_examples() {
        let mut s = BTreeMap::new();
        s.insert(dev("cam"), local(10.0, "cam"));
        s.insert(dev("mcu"), local(10.0, "mcu"));
        let o = estimate_offsets(&s, dev("cam")).unwrap();
        assert_eq!((o.get(dev("cam")), o.get(dev("mcu"))), (Some(0.0), Some(0.0)));

        s.insert(dev("mcu"), local(12.5, "mcu"));
        let o = estimate_offsets(&s, dev("cam")).unwrap();
        assert_eq!(o.get(dev("mcu")), Some(2.5));
        assert!(matches!(
            estimate_offsets(&s, dev("imu")),
            Err(SyncError::MissingMaster(_))
        ));
    }

    #[test]
    fn offsets_make_sync_markers_coincide() {
        let mut raw = RawEpisode::default();
        raw.sync_markers.insert(dev("cam"), local(3.25, "cam"));
        raw.sync_markers.insert(dev("mcu"), local(7.0, "mcu"));
        raw.sync_markers.insert(dev("imu"), local(5.125, "imu"));
        let o = estimate_offsets(&raw.sync_markers, dev("mcu")).unwrap();
        assert_eq!(o.get(dev("mcu")), Some(0.0));
        let shifted = apply_offsets(&raw, &o).unwrap();
        let vals: Vec<f64> = shifted.sync_markers.values().map(|t| t.secs()).collect();
        assert!(vals.iter().all(|&v| v == vals[0]), "{vals:?}");
        assert!(shifted
            .sync_markers
            .values()
            .all(|t| t.clock() == Clock::Master));
    }

    #[test]
    fn missing_device_detected() {
        let mut raw = RawEpisode::default();
        raw.sync_markers.insert(dev("cam"), local(1.0, "cam"));
        raw.tactile_left.push(TactileFrame::zeros(local(2.0, "mcu"), Jaw::Left));
        assert!(matches!(
            estimate_episode_offsets(&raw, dev("cam")),
            Err(SyncError::MissingDevice(d)) if d == dev("mcu")
        ));
        let o = estimate_offsets(&raw.sync_markers, dev("cam")).unwrap();
        assert!(matches!(
            apply_offsets(&raw, &o),
            Err(SyncError::MissingDevice(_))
        ));
    }

    #[test]
    fn applying_offsets() {
        let mut raw = RawEpisode::default();
        raw.sync_markers.insert(dev("cam"), local(10.0, "cam"));
        raw.sync_markers.insert(dev("mcu"), local(12.5, "mcu"));
        raw.tactile_left.push(TactileFrame::zeros(local(13.0, "mcu"), Jaw::Left));
        raw.trajectory
            .push(PoseSample::identity(local(11.0, "cam"), PoseFrame::Camera));
        let o = estimate_offsets(&raw.sync_markers, dev("cam")).unwrap();
        let out = apply_offsets(&raw, &o).unwrap();
        assert_eq!(out.tactile_left[0].t(), m(10.5));
        assert_eq!(out.trajectory[0].t(), m(11.0));

        let mut zero = BTreeMap::new();
        zero.insert(dev("cam"), 0.0);
        zero.insert(dev("mcu"), 0.0);
        let z = ClockOffsets::new(dev("cam"), zero).unwrap();
        let same = apply_offsets(&raw, &z).unwrap();
        assert_eq!(same.tactile_left[0].t().secs(), 13.0);
        assert_eq!(same.trajectory[0].t().secs(), 11.0);
    }

    #[test]
    fn nearest_ties_go_early() {
        assert_eq!(nearest_index(&[], 1.0), None);
        assert_eq!(nearest_index(&[0.0, 2.0], 1.0), Some(0));
        assert_eq!(nearest_index(&[0.0, 2.0], 1.5), Some(1));
        assert_eq!(nearest_index(&[0.0, 2.0], -1.0), Some(0));
        assert_eq!(nearest_index(&[0.0, 2.0], 3.0), Some(1));
    }

    #[test]
    fn single_pose_is_held_everywhere() {
        let raw = RawEpisode {
            trajectory: vec![PoseSample::from_wxyz(
                m(0.5),
                PoseFrame::Camera,
                [1.0, 2.0, 3.0],
                [1.0, 0.0, 0.0, 0.0],
            )
            .unwrap()],
            markers: [markers_at(0.0, 0.05), markers_at(1.0, 0.05)].concat(),
            ..Default::default()
        };
        let ep = align(&raw, 10.0, &AlignmentPolicy::default(), &rig0()).unwrap();
        assert_eq!(ep.n_ticks(), 11);
        for p in &ep.poses {
            assert_eq!(p.translation().as_slice(), &[1.0, 2.0, 3.0]);
            assert_eq!(p.frame(), PoseFrame::Tcp);
        }
        assert!(ep.check_shape().is_ok());
    }

    #[test]
    fn tactile_gap_examples() {
        // Brute-force oracle for the nearest choice.
        let brute = |times: &[f64], t: f64| {
            let mut best = 0;
            for (i, &x) in times.iter().enumerate() {
                if (x - t).abs() < (times[best] - t).abs() {
                    best = i;
                }
            }
            best
        };
        let times = [0.0, 0.1];
        let raw = RawEpisode {
            trajectory: vec![PoseSample::identity(m(0.0), PoseFrame::Camera)],
            tactile_left: tactile_at(&times, Jaw::Left),
            markers: markers_at(0.0, 0.05),
            ..Default::default()
        };
        let (ep, trace) = align_traced(&raw, 25.0, &AlignmentPolicy::default(), &rig0()).unwrap();
        // ticks at 0, 0.04, 0.08
        assert_eq!(ep.timeline[1].secs(), 0.04);
        assert_eq!(trace.tactile_left[1], Some(brute(&times, 0.04)));
        assert_eq!(trace.tactile_left[1], Some(0));
        assert!(ep.tactile_left[1].valid);

        let times = [0.0, 0.2];
        let raw = RawEpisode {
            trajectory: vec![PoseSample::identity(m(0.0), PoseFrame::Camera)],
            tactile_left: tactile_at(&times, Jaw::Left),
            markers: markers_at(0.0, 0.05),
            ..Default::default()
        };
        let ep = align(&raw, 10.0, &AlignmentPolicy::default(), &rig0()).unwrap();
        assert_eq!(ep.timeline[1].secs(), 0.1);
        assert!(!ep.tactile_left[1].valid);
        assert_eq!(ep.tactile_left[1].frame.grid().sum(), 0);
        assert!(ep.tactile_left[0].valid && ep.tactile_left[2].valid);
        // No right-jaw stream at all.
        assert!(ep.tactile_right.iter().all(|t| !t.valid));
    }

    #[test]
    fn width_at_sample_tick_is_exact() {
        let raw = RawEpisode {
            trajectory: vec![PoseSample::identity(m(0.0), PoseFrame::Camera)],
            markers: [
                markers_at(0.0, 0.07),
                markers_at(0.5, 0.0312345),
                markers_at(1.0, 0.05),
            ]
            .concat(),
            ..Default::default()
        };
        let (ep, trace) = align_traced(&raw, 4.0, &AlignmentPolicy::default(), &rig0()).unwrap();
        assert_eq!(ep.timeline[2].secs(), 0.5);
        assert_eq!(ep.widths[2].width(), trace.widths[1].width());
        assert!((ep.widths[1].width() - 0.5 * (trace.widths[0].width() + trace.widths[1].width())).abs() < 1e-15);
    }

    #[test]
    fn empty_and_rate_errors() {
        let rig = rig0();
        let pol = AlignmentPolicy::default();
        assert!(matches!(
            align(&RawEpisode::default(), 30.0, &pol, &rig),
            Err(SyncError::EmptyEpisode)
        ));
        let raw = RawEpisode {
            trajectory: vec![
                PoseSample::identity(m(0.0), PoseFrame::Camera),
                PoseSample::identity(m(100.0), PoseFrame::Camera),
            ],
            markers: markers_at(0.0, 0.05),
            ..Default::default()
        };
        assert!(matches!(
            align(&raw, 1e7, &pol, &rig),
            Err(SyncError::RateOutOfRange { .. })
        ));
        assert!(matches!(align(&raw, 0.0, &pol, &rig), Err(SyncError::BadRate(_))));
        let no_markers = RawEpisode {
            markers: vec![],
            ..raw
        };
        assert!(matches!(
            align(&no_markers, 30.0, &pol, &rig),
            Err(SyncError::EmptyStream("markers"))
        ));
    }

    #[test]
    fn labels_follow_button() {
        let raw = RawEpisode {
            trajectory: vec![
                PoseSample::identity(m(0.0), PoseFrame::Camera),
                PoseSample::identity(m(10.0), PoseFrame::Camera),
            ],
            markers: markers_at(0.0, 0.05),
            buttons: vec![ButtonEvent::press(m(2.0)), ButtonEvent::release(m(5.0))],
            ..Default::default()
        };
        let ep = align(&raw, 1.0, &AlignmentPolicy::default(), &rig0()).unwrap();
        let fine: Vec<usize> = ep
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Fine)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(fine, vec![2, 3, 4]);
        assert_eq!(ep.segments.len(), 3);
        assert_eq!(ep.segments[2].t_end().secs(), 11.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn nearest_matches_linear_scan(mut times in proptest::collection::vec(0.0f64..100.0, 1..10_000),
                                           queries in proptest::collection::vec(-1.0f64..101.0, 1..200)) {
                times.sort_by(f64::total_cmp);
                for q in queries {
                    let mut best = 0;
                    for (i, &x) in times.iter().enumerate() {
                        if (x - q).abs() < (times[best] - q).abs() {
                            best = i;
                        }
                    }
                    let got = nearest_index(&times, q).unwrap();
                    // Equal-distance duplicates may differ in index but not in time.
                    prop_assert_eq!((times[got] - q).abs(), (times[best] - q).abs());
                    prop_assert!(got <= best || times[got] == times[best]);
                }
            }

            #[test]
            fn alignment_is_shift_invariant(shift_k in 0u32..64, n in 2usize..40) {
                // Dyadic sample times keep the shifted arithmetic exact.
                let shift = shift_k as f64 * 0.5;
                let build = |s: f64| RawEpisode {
                    trajectory: (0..n)
                        .map(|k| PoseSample::from_wxyz(m(s + k as f64 * 0.25), PoseFrame::Camera,
                            [k as f64 * 0.01, 0.0, 0.0], [1.0, 0.0, 0.0, (k as f64 * 0.1).sin()]).unwrap())
                        .collect(),
                    tactile_left: tactile_at(&(0..n).map(|k| s + k as f64 * 0.125).collect::<Vec<_>>(), Jaw::Left),
                    markers: (0..n).flat_map(|k| markers_at(s + k as f64 * 0.25, 0.01 + 0.001 * k as f64)).collect(),
                    buttons: vec![ButtonEvent::press(m(s + 0.5)), ButtonEvent::release(m(s + 1.5))],
                    ..Default::default()
                };
                let pol = AlignmentPolicy::default();
                let a = align(&build(0.0), 8.0, &pol, &rig0()).unwrap();
                let b = align(&build(shift), 8.0, &pol, &rig0()).unwrap();
                prop_assert_eq!(a.n_ticks(), b.n_ticks());
                prop_assert_eq!(&a.labels, &b.labels);
                for k in 0..a.n_ticks() {
                    prop_assert!((a.widths[k].width() - b.widths[k].width()).abs() < 1e-12);
                    prop_assert!((a.poses[k].translation() - b.poses[k].translation()).norm() < 1e-12);
                    prop_assert_eq!(a.tactile_left[k].frame.grid(), b.tactile_left[k].frame.grid());
                    prop_assert_eq!(a.tactile_left[k].valid, b.tactile_left[k].valid);
                }
            }
        }
    }
}
