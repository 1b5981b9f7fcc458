//! Deterministic kinematic simulation of the hand-held gripper: scripted
//! demonstrations with per-device clock faults, tactile imprints, and a
//! velocity-command `step` for live teleoperation.

use std::collections::BTreeMap;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Rig;
use crate::ingest::{MarkerObservation, StreamDevices};
use crate::model::{
    grid_time, normalize_quat, ButtonEvent, Clock, DeviceId, FrameRef, Jaw, ModelError, PoseFrame,
    PoseSample, RawEpisode, TactileFrame, TactileGrid, Timestamp, WidthSample, TAXELS, TAXEL_COLS,
};
use crate::pose_width::{compose, slerp, Rigid};
use crate::segmentation::{label_frames, segments_from_button, SegmentError};
use crate::sync::{
    tick_count, AlignedEpisode, AlignedTactile, AlignmentPolicy, DeviceOffset, EpisodeEvent,
    EpisodeMeta, SyncError,
};
use crate::tactile::{CalibCurve, JawGeometry};

/// Width at or below `grip_thickness + GRASP_EPS` counts as holding the object.
pub const GRASP_EPS: f64 = 1e-9;

pub const EVENT_INITIAL_POSE: &str = "initial_pose";
pub const EVENT_GRASP: &str = "grasp";
pub const EVENT_APPROACH: &str = "approach";
pub const EVENT_INSERTION_COMPLETE: &str = "insertion_complete";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad simulator config: {0}")]
    BadConfig(String),
    #[error("bad cross-section: {0}")]
    BadShape(String),
    #[error("step dt {0} must be positive and finite")]
    BadDt(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub pose: f64,
    pub tactile: f64,
    pub marker: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            pose: 30.0,
            tactile: 60.0,
            marker: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockFault {
    /// Local clock minus master clock, seconds.
    pub offset: f64,
    pub jitter_std: f64,
    pub drop_prob: f64,
}

/// Object cross-section pressed into the pads, centered on them (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSection {
    Circle { r: f64 },
    Rectangle { w: f64, h: f64 },
    /// Regular hexagon with circumradius `r`, two vertices on the column axis.
    Hexagon { r: f64 },
}

impl CrossSection {
    pub fn check(&self) -> Result<(), SimError> {
        let dims: &[f64] = match self {
            CrossSection::Circle { r } | CrossSection::Hexagon { r } => &[*r],
            CrossSection::Rectangle { w, h } => &[*w, *h],
        };
        if dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            Ok(())
        } else {
            Err(SimError::BadShape(format!("{self:?} needs positive dimensions")))
        }
    }

    /// Whether pad-plane point `(x, y)` lies inside (boundary included).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            CrossSection::Circle { r } => x * x + y * y <= r * r,
            CrossSection::Rectangle { w, h } => x.abs() <= w / 2.0 && y.abs() <= h / 2.0,
            CrossSection::Hexagon { r } => {
                let s3 = 3f64.sqrt();
                y.abs() <= r * s3 / 2.0 && s3 * x.abs() + y.abs() <= s3 * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds from the start of the demonstration.
    pub t: f64,
    pub position: [f64; 3],
    /// `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub width: f64,
    /// Button state from this waypoint until the next one.
    pub button: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ToyInsertion,
    Scripted(Vec<Waypoint>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimLimits {
    pub max_linear: f64,
    pub max_angular: f64,
    pub max_width_rate: f64,
}

impl Default for SimLimits {
    fn default() -> Self {
        Self {
            max_linear: 0.5,
            max_angular: 2.0,
            max_width_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub rates: Rates,
    pub clock_faults: BTreeMap<DeviceId, ClockFault>,
    pub scenario: Scenario,
    pub object: CrossSection,
    /// Object extent between the jaws when grasped.
    pub grip_thickness: f64,
    /// Normal force of a closed grasp, newtons.
    pub grip_force: f64,
    /// Gaussian count noise on every taxel.
    pub tactile_noise_std: f64,
    /// Stretches every scripted waypoint time.
    pub time_scale: f64,
    pub limits: SimLimits,
    pub devices: StreamDevices,
    pub rig: Rig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rates: Rates::default(),
            clock_faults: BTreeMap::new(),
            scenario: Scenario::ToyInsertion,
            object: CrossSection::Hexagon { r: 0.006 },
            grip_thickness: 0.03,
            grip_force: 2.0,
            tactile_noise_std: 0.0,
            time_scale: 1.0,
            limits: SimLimits::default(),
            devices: StreamDevices::default(),
            rig: Rig::default(),
        }
    }
}

impl SimConfig {
    pub fn fault(&self, d: DeviceId) -> ClockFault {
        self.clock_faults.get(&d).copied().unwrap_or_default()
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadConfig(m));
        let r = self.rates;
        if ![r.pose, r.tactile, r.marker].iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad(format!("rates must be positive: {r:?}"));
        }
        for (d, f) in &self.clock_faults {
            if !f.offset.is_finite() {
                return bad(format!("{d}: offset must be finite"));
            }
            if !(f.jitter_std.is_finite() && f.jitter_std >= 0.0) {
                return bad(format!("{d}: jitter_std must be >= 0"));
            }
            if !(0.0..1.0).contains(&f.drop_prob) {
                return bad(format!("{d}: drop_prob must lie in [0, 1)"));
            }
        }
        self.object.check()?;
        let wmax = self.rig.width_calib.width_max;
        if !(self.grip_thickness > 0.0 && self.grip_thickness < wmax) {
            return bad(format!("grip_thickness must lie in (0, {wmax})"));
        }
        if !(self.grip_force.is_finite() && self.grip_force >= 0.0) {
            return bad("grip_force must be >= 0".into());
        }
        if !(self.tactile_noise_std.is_finite() && self.tactile_noise_std >= 0.0) {
            return bad("tactile_noise_std must be >= 0".into());
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return bad("time_scale must be positive".into());
        }
        let l = self.limits;
        if ![l.max_linear, l.max_angular, l.max_width_rate].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad(format!("limits must be >= 0: {l:?}"));
        }
        if self.devices.camera == self.devices.mcu {
            return bad("camera and mcu devices must differ".into());
        }
        Ok(())
    }
}

/// Everything needed to rasterize one imprint.
#[derive(Debug, Clone, Copy)]
pub struct ImprintSpec<'a> {
    pub shape: CrossSection,
    pub grip_force: f64,
    pub noise_std: f64,
    pub geometry: &'a JawGeometry,
    pub curve: &'a CalibCurve,
    pub ceiling: u16,
}

/// Cells whose taxel centers fall inside `shape`, row-major.
pub fn imprint_mask(shape: &CrossSection, geometry: &JawGeometry) -> [bool; TAXELS] {
    let mut mask = [false; TAXELS];
    for (i, m) in mask.iter_mut().enumerate() {
        let (x, y) = geometry.taxel_center(i / TAXEL_COLS, i % TAXEL_COLS);
        *m = shape.contains(x, y);
    }
    mask
}

fn imprint_with(spec: &ImprintSpec, rng: &mut ChaCha8Rng, t: Timestamp, jaw: Jaw) -> Result<TactileFrame, SimError> {
    spec.shape.check()?;
    if !(spec.grip_force.is_finite() && spec.grip_force >= 0.0) {
        return Err(SimError::BadConfig(format!("grip_force {} must be >= 0", spec.grip_force)));
    }
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| SimError::BadConfig(format!("noise_std: {e}")))?;
    let mask = imprint_mask(&spec.shape, spec.geometry);
    let level = spec.curve.inverse(spec.grip_force);
    let mut cells = [0u16; TAXELS];
    for (c, inside) in cells.iter_mut().zip(mask) {
        let n = if spec.noise_std > 0.0 { rng.sample(noise) } else { 0.0 };
        let v = if inside { level + n } else { n };
        *c = v.round().clamp(0.0, spec.ceiling as f64) as u16;
    }
    Ok(TactileFrame::new(t, jaw, TactileGrid::new(cells, spec.ceiling)?))
}

/// One tactile frame of `shape` pressed with `grip_force`; deterministic per
/// seed.
pub fn synth_tactile_imprint(spec: &ImprintSpec, seed: u64, t: Timestamp, jaw: Jaw) -> Result<TactileFrame, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    imprint_with(spec, &mut rng, t, jaw)
}

/// Live simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// World pose of the TCP.
    pub tcp: Rigid,
    pub width: f64,
    pub button: bool,
    pub grasped: bool,
    /// Master seconds.
    pub clock: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimCommand {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
    pub width_rate: f64,
    pub button: bool,
}

/// Fixed scene quantities used by [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub limits: SimLimits,
    pub width_max: f64,
    pub object_position: [f64; 3],
    pub grip_thickness: f64,
    /// Largest TCP-to-object distance at which closing the jaws grasps.
    pub grasp_range: f64,
}

impl StepParams {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            limits: cfg.limits,
            width_max: cfg.rig.width_calib.width_max,
            object_position: TOY_OBJECT_POSITION,
            grip_thickness: cfg.grip_thickness,
            grasp_range: 0.05,
        }
    }
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// The command actually applied after clamping to the configured limits.
pub fn clamp_command(cmd: &SimCommand, limits: &SimLimits) -> SimCommand {
    let lin = clamp_norm(Vector3::from(cmd.linear), limits.max_linear);
    let ang = clamp_norm(Vector3::from(cmd.angular), limits.max_angular);
    SimCommand {
        linear: [lin.x, lin.y, lin.z],
        angular: [ang.x, ang.y, ang.z],
        width_rate: cmd.width_rate.clamp(-limits.max_width_rate, limits.max_width_rate),
        button: cmd.button,
    }
}

/// Advance `state` by `dt` under a velocity command (world-frame rates).
pub fn step(state: &SimState, cmd: &SimCommand, dt: f64, p: &StepParams) -> Result<SimState, SimError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::BadDt(dt));
    }
    let all = cmd.linear.iter().chain(&cmd.angular).chain([&cmd.width_rate]);
    if !all.into_iter().all(|v| v.is_finite()) {
        return Err(SimError::BadConfig("command velocities must be finite".into()));
    }
    let c = clamp_command(cmd, &p.limits);
    let v = Vector3::from(c.linear);
    let w = Vector3::from(c.angular);
    let translation = state.tcp.translation + v * dt;
    let rotation = if w == Vector3::zeros() {
        state.tcp.rotation
    } else {
        let q = UnitQuaternion::from_scaled_axis(w * dt) * state.tcp.rotation;
        normalize_quat(*q.quaternion())?
    };
    let width = (state.width + c.width_rate * dt).clamp(0.0, p.width_max);
    let near = (translation - Vector3::from(p.object_position)).norm() <= p.grasp_range;
    let closed = width <= p.grip_thickness + GRASP_EPS;
    let was_closed = state.width <= p.grip_thickness + GRASP_EPS;
    let grasped = if state.grasped {
        closed
    } else {
        closed && !was_closed && near
    };
    Ok(SimState {
        tcp: Rigid {
            translation,
            rotation,
        },
        width,
        button: c.button,
        grasped,
        clock: state.clock + dt,
    })
}

/// Where the toy scenario's wrench lies.
pub const TOY_OBJECT_POSITION: [f64; 3] = [0.50, 0.0, 0.06];

fn axis_quat(axis: Vector3<f64>, deg: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), deg.to_radians());
    let q = q.quaternion();
    [q.w, q.i, q.j, q.k]
}

/// The scripted toy insertion: pick up a hex wrench and insert it into the
/// hole of a tilted stand. Times are relative to the start.
pub fn toy_insertion_waypoints(grip_thickness: f64) -> Vec<Waypoint> {
    let open = 0.07;
    let yaw = axis_quat(Vector3::z(), 15.0);
    let tilt_q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 20f64.to_radians());
    let tilt = axis_quat(Vector3::x(), 20.0);
    let aligned = {
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 2f64.to_radians()) * tilt_q;
        let q = q.quaternion();
        [q.w, q.i, q.j, q.k]
    };
    let ident = [1.0, 0.0, 0.0, 0.0];
    let hole = [0.30, 0.25, 0.21];
    let dir = tilt_q * Vector3::new(0.0, 0.0, -1.0);
    let inserted = [hole[0] + 0.04 * dir.x, hole[1] + 0.04 * dir.y, hole[2] + 0.04 * dir.z];
    let wp = |t: f64, position: [f64; 3], rotation: [f64; 4], width: f64, button: bool, event: Option<&str>| Waypoint {
        t,
        position,
        rotation,
        width,
        button,
        event: event.map(str::to_string),
    };
    let obj = TOY_OBJECT_POSITION;
    let g = grip_thickness;
    vec![
        wp(0.0, [0.40, -0.20, 0.30], ident, open, false, Some(EVENT_INITIAL_POSE)),
        wp(0.5, [0.40, -0.20, 0.30], ident, open, false, None),
        wp(2.5, [obj[0], obj[1], 0.15], yaw, open, false, None),
        wp(3.5, obj, yaw, open, false, None),
        wp(4.1, obj, yaw, g, false, Some(EVENT_GRASP)),
        wp(4.4, obj, yaw, g, false, None),
        wp(5.4, [obj[0], obj[1], 0.20], yaw, g, false, None),
        wp(7.4, [0.30, 0.25, 0.22], tilt, g, false, None),
        wp(8.4, [0.30, 0.25, 0.22], tilt, g, true, Some(EVENT_APPROACH)),
        wp(10.4, hole, aligned, g, true, None),
        wp(12.4, inserted, aligned, g, false, Some(EVENT_INSERTION_COMPLETE)),
        wp(13.0, inserted, aligned, open, false, None),
        wp(14.0, [inserted[0], inserted[1], inserted[2] + 0.08], aligned, open, false, None),
    ]
}

/// Closed-form trajectory through waypoints with cosine easing.
#[derive(Debug, Clone)]
pub struct Script {
    /// Absolute (master) waypoint times.
    times: Vec<f64>,
    positions: Vec<Vector3<f64>>,
    rotations: Vec<UnitQuaternion<f64>>,
    widths: Vec<f64>,
    buttons: Vec<bool>,
    events: Vec<Option<String>>,
}

fn ease(u: f64) -> f64 {
    (1.0 - (std::f64::consts::PI * u).cos()) / 2.0
}

impl Script {
    pub fn new(wps: &[Waypoint], t0: f64, scale: f64, width_max: f64) -> Result<Self, SimError> {
        if wps.is_empty() {
            return Err(SimError::BadConfig("scenario has no waypoints".into()));
        }
        if wps[0].t != 0.0 {
            return Err(SimError::BadConfig("first waypoint must be at t = 0".into()));
        }
        let mut s = Script {
            times: Vec::new(),
            positions: Vec::new(),
            rotations: Vec::new(),
            widths: Vec::new(),
            buttons: Vec::new(),
            events: Vec::new(),
        };
        for (i, w) in wps.iter().enumerate() {
            if w.t.is_nan() || (i > 0 && w.t <= wps[i - 1].t) {
                return Err(SimError::BadConfig(format!("waypoint {i} time must increase")));
            }
            if !w.position.iter().all(|v| v.is_finite()) {
                return Err(SimError::BadConfig(format!("waypoint {i} position not finite")));
            }
            if !(w.width.is_finite() && (0.0..=width_max).contains(&w.width)) {
                return Err(SimError::BadConfig(format!("waypoint {i} width outside [0, {width_max}]")));
            }
            let [qw, qx, qy, qz] = w.rotation;
            s.times.push(t0 + w.t * scale);
            s.positions.push(Vector3::from(w.position));
            s.rotations.push(normalize_quat(Quaternion::new(qw, qx, qy, qz))?);
            s.widths.push(w.width);
            s.buttons.push(w.button);
            s.events.push(w.event.clone());
        }
        Ok(s)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Segment index and eased fraction at `t` (clamped to the script).
    fn locate(&self, t: f64) -> (usize, f64) {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return (0, 0.0);
        }
        if i == self.times.len() {
            return (i - 1, 0.0);
        }
        let (a, b) = (self.times[i - 1], self.times[i]);
        (i - 1, ease((t - a) / (b - a)))
    }

    pub fn tcp(&self, t: f64) -> Rigid {
        let (i, s) = self.locate(t);
        if s == 0.0 {
            return Rigid {
                translation: self.positions[i],
                rotation: self.rotations[i],
            };
        }
        Rigid {
            translation: self.positions[i] * (1.0 - s) + self.positions[i + 1] * s,
            rotation: slerp(&self.rotations[i], &self.rotations[i + 1], s),
        }
    }

    pub fn width(&self, t: f64) -> f64 {
        let (i, s) = self.locate(t);
        if s == 0.0 {
            return self.widths[i];
        }
        (1.0 - s) * self.widths[i] + s * self.widths[i + 1]
    }

    pub fn button(&self, t: f64) -> bool {
        let i = self.times.partition_point(|&x| x <= t);
        i > 0 && self.buttons[i - 1]
    }

    /// Button edges at waypoint times, on master time.
    pub fn button_edges(&self) -> Vec<(f64, bool)> {
        let mut out = Vec::new();
        let mut state = false;
        for (t, b) in self.times.iter().zip(&self.buttons) {
            if *b != state {
                out.push((*t, *b));
                state = *b;
            }
        }
        out
    }

    pub fn events(&self) -> Vec<(String, f64)> {
        self.events
            .iter()
            .zip(&self.times)
            .filter_map(|(e, t)| e.clone().map(|e| (e, *t)))
            .collect()
    }
}

/// Result of a scripted run: device logs plus the fault-free truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub raw: RawEpisode,
    pub ground_truth: AlignedEpisode,
}

/// Timestamping with one device's clock faults.
struct FaultyClock {
    fault: ClockFault,
    clock: Clock,
    rng: ChaCha8Rng,
    jitter: Normal<f64>,
    prev: f64,
}

impl FaultyClock {
    fn new(seed: u64, stream: u64, device: DeviceId, fault: ClockFault) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            fault,
            clock: Clock::Local(device),
            rng,
            jitter: Normal::new(0.0, fault.jitter_std).map_err(|e| SimError::BadConfig(e.to_string()))?,
            prev: f64::NEG_INFINITY,
        })
    }

    fn dropped(&mut self) -> bool {
        self.fault.drop_prob > 0.0 && self.rng.random::<f64>() < self.fault.drop_prob
    }

    /// Local, strictly increasing timestamp of a true instant.
    fn stamp(&mut self, t_true: f64) -> Result<Timestamp, SimError> {
        let j = if self.fault.jitter_std > 0.0 { self.rng.sample(self.jitter) } else { 0.0 };
        let t = (t_true + self.fault.offset + j).max(self.prev + 1e-6).max(0.0);
        self.prev = t;
        Ok(Timestamp::new(t, self.clock)?)
    }
}

/// Camera-frame observations of both jaw markers at opening `width`.
pub fn marker_pair(rig: &Rig, width: f64, t: Timestamp) -> Result<[MarkerObservation; 2], ModelError> {
    let half = (width + rig.width_calib.marker_offset) / 2.0;
    let e = &rig.extrinsic;
    Ok([
        MarkerObservation::new(t, rig.markers.left, e.apply(&Vector3::new(0.0, -half, 0.0)))?,
        MarkerObservation::new(t, rig.markers.right, e.apply(&Vector3::new(0.0, half, 0.0)))?,
    ])
}

fn sample_times(t0: f64, end: f64, rate: f64) -> Vec<f64> {
    let n = ((end - t0) * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| grid_time(t0, k, rate)).collect()
}

fn frame_uri(index: usize) -> String {
    format!("frames/{index:06}.png")
}

/// Master time of the first sample, chosen so every local clock stays
/// non-negative and offsets stay exactly representable.
fn start_time(cfg: &SimConfig) -> f64 {
    let min_off = cfg.clock_faults.values().map(|f| f.offset).fold(0.0, f64::min);
    let max_jit = cfg.clock_faults.values().map(|f| f.jitter_std).fold(0.0, f64::max);
    ((1.0 - min_off + 8.0 * max_jit) * 64.0).ceil() / 64.0
}

/// Run the configured scenario.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.check()?;
    let wps = match &cfg.scenario {
        Scenario::ToyInsertion => toy_insertion_waypoints(cfg.grip_thickness),
        Scenario::Scripted(w) => w.clone(),
    };
    let t0 = start_time(cfg);
    let wmax = cfg.rig.width_calib.width_max;
    let script = Script::new(&wps, t0, cfg.time_scale, wmax)?;
    let end = script.end();
    let rig = &cfg.rig;
    let e_inv = rig.extrinsic.inverse();
    let (cam, mcu) = (cfg.devices.camera, cfg.devices.mcu);
    let spec = ImprintSpec {
        shape: cfg.object,
        grip_force: cfg.grip_force,
        noise_std: cfg.tactile_noise_std,
        geometry: &rig.tactile.geometry,
        curve: &rig.tactile.calib,
        ceiling: rig.tactile.count_ceiling,
    };
    let grasped = |t: f64| script.width(t) <= cfg.grip_thickness + GRASP_EPS;
    let tcp_sample = |t: Timestamp, secs: f64| -> Result<PoseSample, ModelError> {
        let r = script.tcp(secs);
        PoseSample::new(t, PoseFrame::Tcp, r.translation, *r.rotation.quaternion())
    };
    let imprint = |rng: &mut ChaCha8Rng, t: Timestamp, secs: f64, jaw: Jaw| {
        let force = if grasped(secs) { cfg.grip_force } else { 0.0 };
        imprint_with(&ImprintSpec { grip_force: force, ..spec }, rng, t, jaw)
    };

    let mut raw = RawEpisode::default();

    // Camera: SLAM poses and the matching image frames.
    let mut clk = FaultyClock::new(cfg.seed, 1, cam, cfg.fault(cam))?;
    for (k, &t) in sample_times(t0, end, cfg.rates.pose).iter().enumerate() {
        if clk.dropped() {
            continue;
        }
        let local = clk.stamp(t)?;
        let tcp = tcp_sample(local, t)?;
        raw.trajectory.push(compose(&tcp, &e_inv, PoseFrame::Camera)?);
        raw.frames.push(FrameRef {
            t: local,
            index: k as u64,
            uri: frame_uri(k),
        });
    }

    let mut clk = FaultyClock::new(cfg.seed, 2, cam, cfg.fault(cam))?;
    for &t in &sample_times(t0, end, cfg.rates.marker) {
        if clk.dropped() {
            continue;
        }
        let local = clk.stamp(t)?;
        raw.markers.extend(marker_pair(rig, script.width(t), local)?);
    }

    let mut clk = FaultyClock::new(cfg.seed, 3, mcu, cfg.fault(mcu))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(5);
    for &t in &sample_times(t0, end, cfg.rates.tactile) {
        if clk.dropped() {
            continue;
        }
        let local = clk.stamp(t)?;
        raw.tactile_left.push(imprint(&mut noise_rng, local, t, Jaw::Left)?);
        raw.tactile_right.push(imprint(&mut noise_rng, local, t, Jaw::Right)?);
    }

    // Button edges are never dropped: a lost edge would break alternation.
    let mut clk = FaultyClock::new(cfg.seed, 4, mcu, ClockFault { drop_prob: 0.0, ..cfg.fault(mcu) })?;
    let edges = script.button_edges();
    for &(t, pressed) in &edges {
        let local = clk.stamp(t)?;
        raw.buttons.push(if pressed { ButtonEvent::press(local) } else { ButtonEvent::release(local) });
    }

    let t_sync = t0 + 0.25;
    for d in [cam, mcu] {
        let off = cfg.fault(d).offset;
        raw.sync_markers.insert(d, Timestamp::new(t_sync + off, Clock::Local(d))?);
    }

    // Ground truth on the fault-free master grid.
    let rate = cfg.rates.pose;
    let last = [cfg.rates.pose, cfg.rates.tactile, cfg.rates.marker]
        .iter()
        .map(|&r| *sample_times(t0, end, r).last().expect("at least one sample"))
        .fold(t0, f64::max);
    let n = tick_count(t0, last, rate)?;
    let timeline = (0..n)
        .map(|k| Timestamp::master(grid_time(t0, k, rate)))
        .collect::<Result<Vec<_>, _>>()?;
    let poses = timeline
        .iter()
        .map(|&t| tcp_sample(t, t.secs()))
        .collect::<Result<Vec<_>, _>>()?;
    let widths = timeline
        .iter()
        .map(|&t| WidthSample::new(t, script.width(t.secs()), wmax))
        .collect::<Result<Vec<_>, _>>()?;
    let clean = |jaw: Jaw| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        timeline
            .iter()
            .map(|&t| {
                let force = if grasped(t.secs()) { cfg.grip_force } else { 0.0 };
                let spec = ImprintSpec { grip_force: force, noise_std: 0.0, ..spec };
                Ok(AlignedTactile {
                    frame: imprint_with(&spec, &mut rng, t, jaw)?,
                    valid: true,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()
    };
    let true_edges = edges
        .iter()
        .map(|&(t, p)| {
            let t = Timestamp::master(t)?;
            Ok(if p { ButtonEvent::press(t) } else { ButtonEvent::release(t) })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let span_end = Timestamp::master(grid_time(t0, n, rate))?;
    let segments = segments_from_button(&true_edges, (timeline[0], span_end))?;
    let labels = label_frames(&timeline, &segments)?;
    let frame_times = sample_times(t0, end, cfg.rates.pose);
    let frames = timeline
        .iter()
        .map(|t| {
            let k = crate::sync::nearest_index(&frame_times, t.secs()).expect("frames exist");
            Ok(Some(FrameRef {
                t: Timestamp::master(frame_times[k])?,
                index: k as u64,
                uri: frame_uri(k),
            }))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let secs: Vec<f64> = timeline.iter().map(|t| t.secs()).collect();
    let mut events: Vec<EpisodeEvent> = script
        .events()
        .into_iter()
        .filter_map(|(name, t)| {
            let tick = secs.partition_point(|&x| x < t);
            (tick < n).then(|| EpisodeEvent {
                name,
                tick,
                t: timeline[tick],
            })
        })
        .collect();
    events.sort_by_key(|e| e.tick);

    let mut meta = EpisodeMeta::new(rate, AlignmentPolicy::default(), rig.clone());
    meta.episode_id = format!("sim-{}", cfg.seed);
    meta.master = cam;
    meta.devices = [cam, mcu]
        .into_iter()
        .map(|d| DeviceOffset {
            id: d,
            offset: if d == cam { 0.0 } else { cfg.fault(d).offset - cfg.fault(cam).offset },
        })
        .collect();

    let ground_truth = AlignedEpisode {
        meta,
        tactile_left: clean(Jaw::Left)?,
        tactile_right: clean(Jaw::Right)?,
        timeline,
        poses,
        widths,
        labels,
        frames,
        segments,
        events,
    };
    Ok(SimOutput { raw, ground_truth })
}

/// [`simulate`] restricted to the toy-insertion scenario.
pub fn simulate_insertion_demo(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    match cfg.scenario {
        Scenario::ToyInsertion => simulate(cfg),
        Scenario::Scripted(_) => Err(SimError::BadConfig("scenario must be toy_insertion".into())),
    }
}

/// Live state at the first toy-insertion waypoint. The clock starts late
/// enough that every faulty local clock stays non-negative.
pub fn initial_state(cfg: &SimConfig) -> SimState {
    let w = &toy_insertion_waypoints(cfg.grip_thickness)[0];
    SimState {
        tcp: Rigid::new(w.position, w.rotation).expect("valid waypoint"),
        width: w.width,
        button: false,
        grasped: false,
        clock: start_time(cfg),
    }
}

/// Device logs of a live session, one sample of every stream per recorded
/// tick, timestamped with the configured clock faults.
pub struct LiveRecorder {
    rig: Rig,
    e_inv: Rigid,
    pose_clock: FaultyClock,
    marker_clock: FaultyClock,
    tactile_clock: FaultyClock,
    button_clock: FaultyClock,
    raw: RawEpisode,
    button: bool,
    ticks: u64,
}

impl LiveRecorder {
    /// Start recording at `state`; the sync pulse is emitted at its clock.
    pub fn new(cfg: &SimConfig, state: &SimState) -> Result<Self, SimError> {
        cfg.check()?;
        let (cam, mcu) = (cfg.devices.camera, cfg.devices.mcu);
        let mut raw = RawEpisode::default();
        for d in [cam, mcu] {
            let t = state.clock + cfg.fault(d).offset;
            raw.sync_markers.insert(d, Timestamp::new(t, Clock::Local(d))?);
        }
        let mut rec = Self {
            rig: cfg.rig.clone(),
            e_inv: cfg.rig.extrinsic.inverse(),
            pose_clock: FaultyClock::new(cfg.seed, 1, cam, cfg.fault(cam))?,
            marker_clock: FaultyClock::new(cfg.seed, 2, cam, cfg.fault(cam))?,
            tactile_clock: FaultyClock::new(cfg.seed, 3, mcu, cfg.fault(mcu))?,
            button_clock: FaultyClock::new(cfg.seed, 4, mcu, ClockFault { drop_prob: 0.0, ..cfg.fault(mcu) })?,
            raw,
            button: false,
            ticks: 0,
        };
        rec.record_button(state)?;
        Ok(rec)
    }

    fn record_button(&mut self, state: &SimState) -> Result<(), SimError> {
        if state.button != self.button {
            let t = self.button_clock.stamp(state.clock)?;
            self.raw.buttons.push(if state.button { ButtonEvent::press(t) } else { ButtonEvent::release(t) });
            self.button = state.button;
        }
        Ok(())
    }

    pub fn record(&mut self, state: &SimState, left: &TactileFrame, right: &TactileFrame) -> Result<(), SimError> {
        let k = self.ticks;
        self.ticks += 1;
        if !self.pose_clock.dropped() {
            let t = self.pose_clock.stamp(state.clock)?;
            let tcp = PoseSample::new(t, PoseFrame::Tcp, state.tcp.translation, *state.tcp.rotation.quaternion())?;
            self.raw.trajectory.push(compose(&tcp, &self.e_inv, PoseFrame::Camera)?);
            self.raw.frames.push(FrameRef {
                t,
                index: k,
                uri: frame_uri(k as usize),
            });
        }
        if !self.marker_clock.dropped() {
            let t = self.marker_clock.stamp(state.clock)?;
            self.raw.markers.extend(marker_pair(&self.rig, state.width, t)?);
        }
        if !self.tactile_clock.dropped() {
            let t = self.tactile_clock.stamp(state.clock)?;
            self.raw.tactile_left.push(left.with_time(t));
            self.raw.tactile_right.push(right.with_time(t));
        }
        self.record_button(state)
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn finish(self) -> RawEpisode {
        self.raw
    }
}

/// Noise-free imprint pair for a live state.
pub fn live_tactile(cfg: &SimConfig, state: &SimState, t: Timestamp) -> Result<(TactileFrame, TactileFrame), SimError> {
    if !state.grasped {
        return Ok((TactileFrame::zeros(t, Jaw::Left), TactileFrame::zeros(t, Jaw::Right)));
    }
    let spec = ImprintSpec {
        shape: cfg.object,
        grip_force: cfg.grip_force,
        noise_std: 0.0,
        geometry: &cfg.rig.tactile.geometry,
        curve: &cfg.rig.tactile.calib,
        ceiling: cfg.rig.tactile.count_ceiling,
    };
    Ok((
        synth_tactile_imprint(&spec, 0, t, Jaw::Left)?,
        synth_tactile_imprint(&spec, 0, t, Jaw::Right)?,
    ))
}
