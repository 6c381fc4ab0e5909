//! Wire schemas for the control endpoint and the stream.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sonomyo::session::{SessionConfig, SourceSpec};
use sonomyo::task::{Target, TrialEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlCommand {
    /// Runs the calibration protocol. A supplied config replaces the
    /// service's session configuration.
    StartCalibration {
        #[serde(default)]
        config: Option<SessionConfig>,
    },
    /// Runs a full session, calibrating first when no references exist yet.
    StartSession {
        #[serde(default)]
        config: Option<SessionConfig>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Abort,
    SetSource {
        source: SourceSpec,
    },
    GetStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Calibrating,
    Running,
}

/// Outcome of the most recent session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub trials: usize,
    pub successes: usize,
    pub aborted: bool,
    pub log_path: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub phase: Phase,
    pub source: String,
    pub calibrated: bool,
    pub session: Option<String>,
    pub trial: Option<usize>,
    pub completed_trials: usize,
    pub last_session: Option<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamMessage {
    Cursor { timestamp: f64, position: f64, s_norm: f64 },
    Target { timestamp: f64, trial: usize, center: f64, half_width: f64 },
    Prompt { timestamp: f64, text: String, cue: String },
    TrialEvent { timestamp: f64, trial: usize, target: Target, event: TrialEvent },
    Status { timestamp: f64, status: Status },
}

impl StreamMessage {
    /// Reliable messages are never dropped under backpressure.
    pub fn is_reliable(&self) -> bool {
        !matches!(self, StreamMessage::Cursor { .. } | StreamMessage::Target { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationInput {
    pub value: f64,
}
