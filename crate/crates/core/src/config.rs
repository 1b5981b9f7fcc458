//! Pipeline configuration file (`config_version` 1, JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{MarkerIds, StreamDevices};
use crate::model::{DeviceId, DEFAULT_COUNT_CEILING};
use crate::pose_width::{Extrinsic, GeometryError, Rigid, WidthCalib};
use crate::sync::AlignmentPolicy;
use crate::tactile::{CalibCurve, ContactThresholds, JawGeometry, TactileError};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {err}", path.display())]
    Io {
        path: std::path::PathBuf,
        err: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported config_version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileConfig {
    pub calib: CalibCurve,
    pub geometry: JawGeometry,
    pub contact: ContactThresholds,
    pub count_ceiling: u16,
}

impl Default for TactileConfig {
    fn default() -> Self {
        Self {
            calib: CalibCurve::default(),
            geometry: JawGeometry::default(),
            contact: ContactThresholds::default(),
            count_ceiling: DEFAULT_COUNT_CEILING,
        }
    }
}

/// Everything fixed per physical (or simulated) device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub extrinsic: Extrinsic,
    pub width_calib: WidthCalib,
    pub markers: MarkerIds,
    pub tactile: TactileConfig,
}

impl Default for Rig {
    fn default() -> Self {
        // Camera 15 cm behind the TCP along its optical axis, pitched 10°.
        let half = 5f64.to_radians();
        Self {
            extrinsic: Rigid::new([0.0, 0.0, 0.15], [half.cos(), half.sin(), 0.0, 0.0])
                .expect("valid default extrinsic"),
            width_calib: WidthCalib::default(),
            markers: MarkerIds::default(),
            tactile: TactileConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub rate_hz: f64,
    pub master: DeviceId,
    pub devices: StreamDevices,
    pub rig: Rig,
    pub policy: AlignmentPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let devices = StreamDevices::default();
        Self {
            config_version: CONFIG_VERSION,
            rate_hz: 30.0,
            master: devices.camera,
            devices,
            rig: Rig::default(),
            policy: AlignmentPolicy::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io {
            path: path.to_path_buf(),
            err,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.config_version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.config_version));
        }
        let invalid = |e: String| ConfigError::Invalid(e);
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(invalid(format!("rate_hz {} must be positive", self.rate_hz)));
        }
        self.rig
            .width_calib
            .check()
            .map_err(|e: GeometryError| invalid(e.to_string()))?;
        self.rig
            .tactile
            .geometry
            .check()
            .map_err(|e: TactileError| invalid(e.to_string()))?;
        self.rig
            .tactile
            .contact
            .check()
            .map_err(|e| invalid(e.to_string()))?;
        self.policy.check().map_err(|e| invalid(e.to_string()))?;
        if self.rig.markers.left == self.rig.markers.right {
            return Err(invalid("left and right marker ids must differ".into()));
        }
        if self.master != self.devices.camera && self.master != self.devices.mcu {
            return Err(invalid(format!("master {} is not a stream device", self.master)));
        }
        Ok(())
    }
}
