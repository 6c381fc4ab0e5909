//! Frame sources, configuration, session logs and the live session runner.

use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::frame::FrameError;
use crate::normalization::BoundsError;
use crate::phantom::PhantomError;
use crate::task::TaskError;

pub mod config;
pub mod log;
pub mod runner;
pub mod source;

pub use config::{data_dir, default_port, OutputConfig, PipelineConfig, SessionConfig, SourceSpec};
pub use log::{read_log, replay, write_log, FrameRecord, LogHeader, LogWriter, SessionLog, LOG_VERSION};
pub use runner::{Pipeline, SessionRunner};
pub use source::{CaptureStub, FrameSource, ManualActivation, PhantomSource, ReplaySource};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("activation {0} outside [0, 1]")]
    ActivationRange(f64),
    #[error("recording error: {0}")]
    Recording(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("capture device {0:?} is not available")]
    DeviceUnavailable(String),
    #[error("malformed log: {0}")]
    Log(String),
    #[error("log version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("log does not start with a header")]
    MissingHeader,
    #[error("log is truncated; {} complete trials recovered", .0.trials.len())]
    Truncated(Box<SessionLog>),
}
