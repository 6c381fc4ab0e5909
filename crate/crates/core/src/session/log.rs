//! Session logs as JSON Lines.
//!
//! The first line is the header, then one line per processed frame and one
//! per completed trial, and finally an end marker. Reference frames are
//! written next to the log as PNG files named in the header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use super::source::{read_png, write_png};
use super::SessionError;
use crate::calibration::TrainingDatabase;
use crate::frame::ReferencePair;
use crate::normalization::{Bounds, CursorSample};
use crate::task::{SessionPlan, TrialRecord};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceManifest {
    pub width: usize,
    pub height: usize,
    /// File names relative to the log's directory.
    pub rest_png: String,
    pub motion_png: String,
    pub rest_timestamp: f64,
    pub motion_timestamp: f64,
    pub flex_window_frames: usize,
    pub rest_window_frames: usize,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub group: String,
    pub session: String,
    pub config: SessionConfig,
    pub plan: SessionPlan,
    /// Presentation time of the first target.
    pub task_start: f64,
    pub initial_bounds: Bounds,
    pub references: Option<ReferenceManifest>,
}

/// Pipeline state after one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub s_raw: f64,
    pub c_rest: f64,
    pub c_motion: f64,
    pub lower: f64,
    pub upper: f64,
    pub s_norm: f64,
    pub position: f64,
    /// The signal was undefined for this frame and the previous value was kept.
    #[serde(default)]
    pub held: bool,
}

impl FrameRecord {
    pub fn cursor(&self) -> CursorSample {
        CursorSample { position: self.position, s_norm: self.s_norm, timestamp: self.t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(Box<LogHeader>),
    Frame(FrameRecord),
    Trial(Box<TrialRecord>),
    End { frames: usize, trials: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: LogHeader,
    pub frames: Vec<FrameRecord>,
    pub trials: Vec<TrialRecord>,
}

/// Sidecar path for a reference image: `<stem>.<role>.png` beside the log.
pub fn sidecar_path(log_path: &Path, role: &str) -> PathBuf {
    let stem = log_path.file_stem().and_then(|s| s.to_str()).unwrap_or("session");
    log_path.with_file_name(format!("{stem}.{role}.png"))
}

/// Writes the reference PNGs beside `log_path` and describes them.
pub fn write_references(log_path: &Path, db: &TrainingDatabase) -> Result<ReferenceManifest, SessionError> {
    let (rest, motion) = (sidecar_path(log_path, "rest"), sidecar_path(log_path, "motion"));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_png(&rest, db.refs.rest_raw())?;
    write_png(&motion, db.refs.motion_raw())?;
    let name = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let (width, height) = db.refs.dims();
    Ok(ReferenceManifest {
        width,
        height,
        rest_png: name(&rest),
        motion_png: name(&motion),
        rest_timestamp: db.refs.rest_raw().timestamp(),
        motion_timestamp: db.refs.motion_raw().timestamp(),
        flex_window_frames: db.flex_window_frames,
        rest_window_frames: db.rest_window_frames,
        created_at: db.created_at,
    })
}

/// Loads the reference pair named in a header.
pub fn load_references(log_path: &Path, manifest: &ReferenceManifest) -> Result<ReferencePair, SessionError> {
    let dir = log_path.parent().unwrap_or(Path::new("."));
    let rest = read_png(&dir.join(&manifest.rest_png), manifest.rest_timestamp)?;
    let motion = read_png(&dir.join(&manifest.motion_png), manifest.motion_timestamp)?;
    Ok(ReferencePair::new(rest, motion)?)
}

/// Streaming writer; every record is flushed as soon as it is written.
pub struct LogWriter {
    out: BufWriter<File>,
    frames: usize,
    trials: usize,
}

fn to_line(line: &Line) -> Result<String, SessionError> {
    serde_json::to_string(line).map_err(|e| SessionError::Log(e.to_string()))
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, SessionError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = Self { out: BufWriter::new(File::create(path)?), frames: 0, trials: 0 };
        w.emit(&Line::Header(Box::new(header.clone())))?;
        Ok(w)
    }

    fn emit(&mut self, line: &Line) -> Result<(), SessionError> {
        writeln!(self.out, "{}", to_line(line)?)?;
        self.out.flush()?;
        Ok(())
    }

    pub fn frame(&mut self, record: &FrameRecord) -> Result<(), SessionError> {
        self.frames += 1;
        self.emit(&Line::Frame(*record))
    }

    pub fn trial(&mut self, record: &TrialRecord) -> Result<(), SessionError> {
        self.trials += 1;
        self.emit(&Line::Trial(Box::new(record.clone())))
    }

    pub fn finish(mut self) -> Result<(), SessionError> {
        let end = Line::End { frames: self.frames, trials: self.trials };
        self.emit(&end)
    }
}

/// Writes a complete log in one go.
pub fn write_log(path: &Path, log: &SessionLog) -> Result<(), SessionError> {
    let mut w = LogWriter::create(path, &log.header)?;
    for f in &log.frames {
        w.frame(f)?;
    }
    for t in &log.trials {
        w.trial(t)?;
    }
    w.finish()
}

/// Serializes a log to the same bytes [`write_log`] would produce.
pub fn log_bytes(log: &SessionLog) -> Result<Vec<u8>, SessionError> {
    let mut out = Vec::new();
    let mut push = |line: &Line| -> Result<(), SessionError> {
        out.extend_from_slice(to_line(line)?.as_bytes());
        out.push(b'\n');
        Ok(())
    };
    push(&Line::Header(Box::new(log.header.clone())))?;
    for f in &log.frames {
        push(&Line::Frame(*f))?;
    }
    for t in &log.trials {
        push(&Line::Trial(Box::new(t.clone())))?;
    }
    push(&Line::End { frames: log.frames.len(), trials: log.trials.len() })?;
    Ok(out)
}

/// Reads a log. A log missing its end marker or cut off mid-line yields
/// [`SessionError::Truncated`] carrying everything recovered before the cut.
pub fn read_log(path: &Path) -> Result<SessionLog, SessionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate().peekable();

    let header = loop {
        let Some((_, line)) = lines.next() else { return Err(SessionError::MissingHeader) };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|_| SessionError::MissingHeader)?;
        if value.get("record").and_then(|r| r.as_str()) != Some("header") {
            return Err(SessionError::MissingHeader);
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != LOG_VERSION {
            return Err(SessionError::Version { found: version, expected: LOG_VERSION });
        }
        match serde_json::from_value::<Line>(value) {
            Ok(Line::Header(h)) => break *h,
            Ok(_) => return Err(SessionError::MissingHeader),
            Err(e) => return Err(SessionError::Log(format!("header: {e}"))),
        }
    };

    let mut log = SessionLog { header, frames: Vec::new(), trials: Vec::new() };
    while let Some((number, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line) {
            Ok(Line::Frame(f)) => log.frames.push(f),
            Ok(Line::Trial(t)) => log.trials.push(*t),
            Ok(Line::End { .. }) => return Ok(log),
            Ok(Line::Header(_)) => return Err(SessionError::Log(format!("line {}: second header", number + 1))),
            Err(_) if lines.peek().is_none() => break,
            Err(e) => return Err(SessionError::Log(format!("line {}: {e}", number + 1))),
        }
    }
    Err(SessionError::Truncated(Box::new(log)))
}

/// Cursor samples of the task phase, in recorded order.
pub fn replay(log: &SessionLog) -> impl Iterator<Item = CursorSample> + '_ {
    let start = log.header.task_start;
    log.frames.iter().filter(move |f| f.t >= start).map(FrameRecord::cursor)
}
