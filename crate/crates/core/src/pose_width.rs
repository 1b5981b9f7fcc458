//! Camera-to-TCP transform, SE(3) interpolation and jaw-marker gripper width.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ingest::{MarkerIds, MarkerObservation};
use crate::model::{
    normalize_quat, ModelError, PoseFrame, PoseSample, Timestamp, WidthSample, DEFAULT_WIDTH_MAX,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("expected a pose in frame {expected}, got {found}")]
    WrongFrame { expected: PoseFrame, found: PoseFrame },
    #[error("poses are in different frames ({0} vs {1})")]
    FrameMismatch(PoseFrame, PoseFrame),
    #[error("time {t} outside bracket [{t0}, {t1}]")]
    OutOfBracket { t: f64, t0: f64, t1: f64 },
    #[error("marker ids ({left}, {right}) do not match the configured jaw ids")]
    IdMismatch { left: u32, right: u32 },
    #[error("marker observations {gap} s apart, limit {limit} s")]
    TimestampGap { gap: f64, limit: f64 },
    #[error("marker offset {0} outside [0, 1)")]
    BadCalib(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rigid transform stored as translation plus `(w, x, y, z)` quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct Rigid {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: [f64; 3], wxyz: [f64; 4]) -> Result<Self, ModelError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteTranslation);
        }
        Ok(Self {
            translation: Vector3::from(translation),
            rotation: normalize_quat(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]))?,
        })
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self {
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    pub fn compose(&self, rhs: &Rigid) -> Rigid {
        Rigid {
            translation: self.translation + self.rotation * rhs.translation,
            rotation: self.rotation * rhs.rotation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn of_pose(p: &PoseSample) -> Self {
        Self {
            translation: *p.translation(),
            rotation: *p.rotation(),
        }
    }

    fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

#[derive(Serialize, Deserialize)]
struct RigidRepr {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl Serialize for Rigid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RigidRepr {
            translation: [self.translation.x, self.translation.y, self.translation.z],
            rotation: self.wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rigid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RigidRepr::deserialize(d)?;
        Rigid::new(r.translation, r.rotation).map_err(serde::de::Error::custom)
    }
}

/// Fixed camera→TCP transform: the TCP pose expressed in the camera frame.
pub type Extrinsic = Rigid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthCalib {
    /// Combined jaw-surface-to-marker-center distance.
    pub marker_offset: f64,
    pub width_max: f64,
}

impl Default for WidthCalib {
    fn default() -> Self {
        Self {
            marker_offset: 0.02,
            width_max: DEFAULT_WIDTH_MAX,
        }
    }
}

impl WidthCalib {
    pub fn new(marker_offset: f64, width_max: f64) -> Result<Self, GeometryError> {
        let c = Self {
            marker_offset,
            width_max,
        };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        if !(0.0..1.0).contains(&self.marker_offset) {
            return Err(GeometryError::BadCalib(self.marker_offset));
        }
        if !(self.width_max.is_finite() && self.width_max > 0.0) {
            return Err(GeometryError::BadCalib(self.width_max));
        }
        Ok(())
    }
}

/// Right-compose `pose` with `rhs` and tag the result with `frame`.
pub fn compose(pose: &PoseSample, rhs: &Rigid, frame: PoseFrame) -> Result<PoseSample, ModelError> {
    let out = Rigid::of_pose(pose).compose(rhs);
    PoseSample::new(pose.t(), frame, out.translation, *out.rotation.quaternion())
}

/// World pose of the TCP from the world pose of the camera.
pub fn camera_to_tcp(p: &PoseSample, e: &Extrinsic) -> Result<PoseSample, GeometryError> {
    if p.frame() != PoseFrame::Camera {
        return Err(GeometryError::WrongFrame {
            expected: PoseFrame::Camera,
            found: p.frame(),
        });
    }
    Ok(compose(p, e, PoseFrame::Tcp)?)
}

/// Shortest-arc spherical interpolation. `s = 0` returns `q0` and `s = 1`
/// returns `q1` (sign-aligned with `q0`) without rounding.
pub fn slerp(q0: &UnitQuaternion<f64>, q1: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let a = q0.quaternion();
    let mut b = *q1.quaternion();
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    if s == 0.0 {
        return *q0;
    }
    if s == 1.0 {
        return UnitQuaternion::new_unchecked(b);
    }
    let q = if dot > 0.9995 {
        a * (1.0 - s) + b * s
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        a * (((1.0 - s) * theta).sin() / sin_theta) + b * ((s * theta).sin() / sin_theta)
    };
    normalize_quat(q).expect("interpolated unit quaternions stay away from zero")
}

/// Pose at `t` between two bracketing samples: linear translation, slerp
/// rotation.
pub fn interpolate_pose(
    p0: &PoseSample,
    p1: &PoseSample,
    t: Timestamp,
) -> Result<PoseSample, GeometryError> {
    if p0.frame() != p1.frame() {
        return Err(GeometryError::FrameMismatch(p0.frame(), p1.frame()));
    }
    p0.t().same_clock(&p1.t())?;
    p0.t().same_clock(&t)?;
    let (t0, t1, tq) = (p0.t().secs(), p1.t().secs(), t.secs());
    if !(t0 <= tq && tq <= t1) {
        return Err(GeometryError::OutOfBracket { t: tq, t0, t1 });
    }
    if tq == t0 {
        return Ok(p0.with_time(t));
    }
    let s = (tq - t0) / (t1 - t0);
    let translation = p0.translation() * (1.0 - s) + p1.translation() * s;
    let rotation = slerp(p0.rotation(), p1.rotation(), s);
    Ok(PoseSample::new(
        t,
        p0.frame(),
        translation,
        *rotation.quaternion(),
    )?)
}

/// Gripper width from a near-simultaneous pair of jaw marker observations.
pub fn width_from_markers(
    left: &MarkerObservation,
    right: &MarkerObservation,
    calib: &WidthCalib,
    ids: MarkerIds,
    rate_hz: f64,
) -> Result<WidthSample, GeometryError> {
    if left.marker_id() != ids.left || right.marker_id() != ids.right {
        return Err(GeometryError::IdMismatch {
            left: left.marker_id(),
            right: right.marker_id(),
        });
    }
    left.t().same_clock(&right.t())?;
    let gap = (left.t().secs() - right.t().secs()).abs();
    let limit = 1.0 / (2.0 * rate_hz);
    if gap > limit {
        return Err(GeometryError::TimestampGap { gap, limit });
    }
    let dist = (left.translation() - right.translation()).norm();
    let width = (dist - calib.marker_offset).max(0.0).min(calib.width_max);
    let mid = Timestamp::new(
        0.5 * (left.t().secs() + right.t().secs()),
        left.t().clock(),
    )?;
    Ok(WidthSample::new(mid, width, calib.width_max)?)
}
