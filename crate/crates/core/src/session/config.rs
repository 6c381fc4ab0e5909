//! Session configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::calibration::CalibrationPlan;
use crate::normalization::{Orientation, TrackerParams};
use crate::phantom::{PhantomParams, VirtualSubjectParams};
use crate::task::PlanConfig;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "SONOMYO_DATA_DIR";
/// Environment variable naming the default gateway port.
pub const PORT_ENV: &str = "SONOMYO_PORT";
pub const DEFAULT_PORT: u16 = 8765;
/// Frames per second of the reference scanner.
pub const NOMINAL_RATE: f64 = 20.0;

/// Data directory from the environment, falling back to `./sonomyo-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("sonomyo-data"))
}

/// Gateway port from the environment, falling back to [`DEFAULT_PORT`].
pub fn default_port() -> u16 {
    std::env::var(PORT_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_PORT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// Phantom driven by a virtual subject.
    Synthetic {
        #[serde(default)]
        phantom: PhantomParams,
        #[serde(default)]
        subject: VirtualSubjectParams,
    },
    /// Phantom driven by externally supplied activation values.
    Manual {
        #[serde(default)]
        phantom: PhantomParams,
    },
    /// Previously recorded frames.
    Replay { path: PathBuf },
    /// Placeholder for a video-capture device.
    CaptureStub { device: String },
}

impl SourceSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SourceSpec::Synthetic { .. } => "synthetic",
            SourceSpec::Manual { .. } => "manual",
            SourceSpec::Replay { .. } => "replay",
            SourceSpec::CaptureStub { .. } => "capture_stub",
        }
    }
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Synthetic { phantom: PhantomParams::default(), subject: VirtualSubjectParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Session log path; relative paths resolve against the data directory.
    #[serde(default)]
    pub log_path: Option<PathBuf>,
}

impl OutputConfig {
    pub fn resolved_log_path(&self) -> Option<PathBuf> {
        self.log_path.as_ref().map(|p| if p.is_absolute() { p.clone() } else { data_dir().join(p) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub pipeline: PipelineConfig,
    pub tracker: TrackerParams,
    pub plan: PlanConfig,
    pub seed: u64,
    pub calibration: CalibrationPlan,
    pub frame_rate: f64,
    pub source: SourceSpec,
    pub output: OutputConfig,
    /// Cohort label carried into the log, e.g. `able_bodied`.
    pub group: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            tracker: TrackerParams::default(),
            plan: PlanConfig::default(),
            seed: 0,
            calibration: CalibrationPlan::default(),
            frame_rate: NOMINAL_RATE,
            source: SourceSpec::default(),
            output: OutputConfig::default(),
            group: "default".into(),
        }
    }
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text).map_err(|e| SessionError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SessionError::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(SessionError::Config("frame_rate must be positive".into()));
        }
        self.tracker.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        self.calibration.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        crate::task::build_session_plan(self.seed, &self.plan).map_err(|e| SessionError::Config(e.to_string()))?;
        if let SourceSpec::Synthetic { phantom, .. } | SourceSpec::Manual { phantom } = &self.source {
            phantom.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
