//! Taxel counts to forces, contact hysteresis, and contact point clouds at
//! the jaw–object interface.

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{
    Jaw, PoseFrame, PoseSample, TactileFrame, Timestamp, WidthSample, DEFAULT_COUNT_CEILING,
    TAXELS, TAXEL_COLS, TAXEL_ROWS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TactileError {
    #[error("bad calibration curve: {0}")]
    BadCurve(String),
    #[error("thresholds need on > off >= 0 (on {on}, off {off})")]
    BadThresholds { on: f64, off: f64 },
    #[error("bad jaw geometry: {0}")]
    BadGeometry(String),
    #[error("expected tcp pose, got frame {0}")]
    FrameMismatch(PoseFrame),
    #[error("inputs refer to different jaws")]
    JawMismatch,
    #[error("mask and force frame have different timestamps")]
    TimeMismatch,
}

/// Piecewise-linear count→newton map. Breakpoints start at (0, 0), increase
/// strictly in counts, never decrease in force, and reach the count ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibCurve {
    points: Vec<(f64, f64)>,
}

impl CalibCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, TactileError> {
        Self::with_ceiling(points, DEFAULT_COUNT_CEILING)
    }

    pub fn with_ceiling(points: Vec<(f64, f64)>, ceiling: u16) -> Result<Self, TactileError> {
        let bad = |m: &str| Err(TactileError::BadCurve(m.to_string()));
        if points.first() != Some(&(0.0, 0.0)) {
            return bad("first breakpoint must be (0, 0)");
        }
        if points.iter().any(|(r, n)| !r.is_finite() || !n.is_finite()) {
            return bad("non-finite breakpoint");
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("counts must increase strictly");
            }
            if w[1].1 < w[0].1 {
                return bad("forces must not decrease");
            }
        }
        if points.last().map(|p| p.0).unwrap_or(0.0) < ceiling as f64 {
            return bad("curve does not cover the count range");
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, raw: f64) -> f64 {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.0 <= raw);
        if i == 0 {
            return 0.0;
        }
        if i == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (r0, n0) = pts[i - 1];
        let (r1, n1) = pts[i];
        if raw == r0 {
            return n0;
        }
        n0 + (raw - r0) / (r1 - r0) * (n1 - n0)
    }

    /// Smallest count whose force reaches `force`, saturating at the last
    /// breakpoint.
    pub fn inverse(&self, force: f64) -> f64 {
        if force <= 0.0 {
            return 0.0;
        }
        for w in self.points.windows(2) {
            let ((r0, n0), (r1, n1)) = (w[0], w[1]);
            if force <= n1 && n1 > n0 {
                return r0 + (force - n0) / (n1 - n0) * (r1 - r0);
            }
        }
        self.points[self.points.len() - 1].0
    }
}

impl Default for CalibCurve {
    fn default() -> Self {
        Self::new(vec![(0.0, 0.0), (512.0, 1.0), (1023.0, 4.0)]).expect("valid default curve")
    }
}

impl Serialize for CalibCurve {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.points.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CalibCurve {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let points = Vec::<(f64, f64)>::deserialize(d)?;
        CalibCurve::new(points).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceFrame {
    pub t: Timestamp,
    pub jaw: Jaw,
    pub forces: [f64; TAXELS],
}

impl ForceFrame {
    pub fn total(&self) -> f64 {
        self.forces.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactMask {
    pub t: Timestamp,
    pub jaw: Jaw,
    pub mask: [bool; TAXELS],
}

impl ContactMask {
    pub fn empty(t: Timestamp, jaw: Jaw) -> Self {
        Self {
            t,
            jaw,
            mask: [false; TAXELS],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Swap columns left-to-right.
    pub fn mirrored(&self, jaw: Jaw) -> Self {
        let mut mask = [false; TAXELS];
        for r in 0..TAXEL_ROWS {
            for c in 0..TAXEL_COLS {
                mask[r * TAXEL_COLS + c] = self.mask[r * TAXEL_COLS + (TAXEL_COLS - 1 - c)];
            }
        }
        Self {
            t: self.t,
            jaw,
            mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactThresholds {
    pub on: f64,
    pub off: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self { on: 0.3, off: 0.15 }
    }
}

impl ContactThresholds {
    pub fn check(&self) -> Result<(), TactileError> {
        if !(self.on > self.off && self.off >= 0.0 && self.on.is_finite()) {
            return Err(TactileError::BadThresholds {
                on: self.on,
                off: self.off,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JawGeometry {
    /// Edge of the square sensing pad.
    pub pad_size: f64,
    /// TCP to pad center at zero width.
    pub pad_center_offset: [f64; 3],
}

impl Default for JawGeometry {
    fn default() -> Self {
        Self {
            pad_size: 0.020,
            pad_center_offset: [0.0; 3],
        }
    }
}

impl JawGeometry {
    pub fn check(&self) -> Result<(), TactileError> {
        if !(self.pad_size.is_finite() && self.pad_size > 0.0) {
            return Err(TactileError::BadGeometry(format!(
                "pad_size {} must be positive",
                self.pad_size
            )));
        }
        if !self.pad_center_offset.iter().all(|v| v.is_finite()) {
            return Err(TactileError::BadGeometry("non-finite pad offset".into()));
        }
        Ok(())
    }

    pub fn pitch(&self) -> f64 {
        self.pad_size / TAXEL_COLS as f64
    }

    /// Taxel center relative to the pad center, as (column axis, row axis).
    pub fn taxel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let p = self.pitch();
        ((col as f64 - 7.5) * p, (row as f64 - 7.5) * p)
    }

    /// Taxel center in TCP coordinates for a jaw opened to `width`. The
    /// right pad faces the left one, so its column axis is mirrored.
    pub fn taxel_in_tcp(&self, jaw: Jaw, width: f64, row: usize, col: usize) -> Vector3<f64> {
        let p = self.pitch();
        let [ox, oy, oz] = self.pad_center_offset;
        let z = (row as f64 - 7.5) * p + oz;
        match jaw {
            Jaw::Left => Vector3::new((col as f64 - 7.5) * p + ox, -width / 2.0 + oy, z),
            Jaw::Right => Vector3::new((7.5 - col as f64) * p + ox, width / 2.0 - oy, z),
        }
    }
}

pub fn calibrate_frame(raw: &TactileFrame, curve: &CalibCurve) -> ForceFrame {
    let mut forces = [0.0; TAXELS];
    for (f, &c) in forces.iter_mut().zip(raw.grid().cells()) {
        *f = curve.eval(c as f64);
    }
    ForceFrame {
        t: raw.t(),
        jaw: raw.jaw(),
        forces,
    }
}

/// Per-cell hysteresis: on at `>= on`, off below `off`, otherwise hold.
pub fn detect_contact(
    f: &ForceFrame,
    th: ContactThresholds,
    prev: Option<&ContactMask>,
) -> Result<ContactMask, TactileError> {
    th.check()?;
    if let Some(p) = prev {
        if p.jaw != f.jaw {
            return Err(TactileError::JawMismatch);
        }
    }
    let mut mask = [false; TAXELS];
    for (i, m) in mask.iter_mut().enumerate() {
        let force = f.forces[i];
        *m = if force >= th.on {
            true
        } else if force < th.off {
            false
        } else {
            prev.map(|p| p.mask[i]).unwrap_or(false)
        };
    }
    Ok(ContactMask {
        t: f.t,
        jaw: f.jaw,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub point: Vector3<f64>,
    pub force: f64,
}

/// World positions of the active taxels, one per true mask cell.
pub fn reconstruct_contact_points(
    mask: &ContactMask,
    f: &ForceFrame,
    tcp: &PoseSample,
    width: &WidthSample,
    g: &JawGeometry,
) -> Result<Vec<ContactPoint>, TactileError> {
    if tcp.frame() != PoseFrame::Tcp {
        return Err(TactileError::FrameMismatch(tcp.frame()));
    }
    if mask.jaw != f.jaw {
        return Err(TactileError::JawMismatch);
    }
    if mask.t != f.t {
        return Err(TactileError::TimeMismatch);
    }
    let mut out = Vec::with_capacity(mask.count());
    for (i, _) in mask.mask.iter().enumerate().filter(|(_, &b)| b) {
        let (row, col) = (i / TAXEL_COLS, i % TAXEL_COLS);
        let local = g.taxel_in_tcp(mask.jaw, width.width(), row, col);
        out.push(ContactPoint {
            point: tcp.transform_point(&local),
            force: f.forces[i],
        });
    }
    Ok(out)
}
