//! The processing lane: one thread that owns the session state, serializes
//! control commands and produces frames.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use sonomyo::calibration::{CalibrationPhase, Calibrator, TrainingDatabase};
use sonomyo::frame::Frame;
use sonomyo::phantom::{Phantom, VirtualSubject};
use sonomyo::session::log::write_references;
use sonomyo::session::source::FrameSource;
use sonomyo::session::{
    CaptureStub, LogHeader, LogWriter, ManualActivation, Pipeline, ReplaySource, SessionConfig, SessionError,
    SessionRunner, SourceSpec, LOG_VERSION,
};
use sonomyo::task::{build_session_plan, DriverOutput, TrialEventKind};
use tokio::sync::oneshot;

use crate::hub::Hub;
use crate::messages::{ControlCommand, Phase, SessionSummary, Status, StreamMessage};
use crate::ControlError;

pub(crate) type Reply = oneshot::Sender<Result<Status, ControlError>>;

pub(crate) struct Request {
    pub command: ControlCommand,
    pub reply: Reply,
}

/// State visible to the HTTP handlers without a round trip through the lane.
#[derive(Debug)]
pub(crate) struct Shared {
    pub status: Mutex<Status>,
    pub manual_enabled: AtomicBool,
    pub manual: ManualActivation,
}

impl Shared {
    pub fn new(source: &SourceSpec) -> Self {
        Self {
            status: Mutex::new(Status {
                phase: Phase::Idle,
                source: source.kind().into(),
                calibrated: false,
                session: None,
                trial: None,
                completed_trials: 0,
                last_session: None,
            }),
            manual_enabled: AtomicBool::new(matches!(source, SourceSpec::Manual { .. })),
            manual: ManualActivation::new(0.0),
        }
    }

    pub fn status(&self) -> Status {
        self.status.lock().expect("status lock").clone()
    }
}

enum Feed {
    Synthetic { phantom: Arc<Phantom>, subject: Box<VirtualSubject> },
    Manual { phantom: Arc<Phantom>, input: ManualActivation },
    Replay { source: ReplaySource, pending: Option<Frame> },
}

enum Mode<'a> {
    Calibration { rel: f64, plan: &'a sonomyo::calibration::CalibrationPlan },
    Task,
}

impl Feed {
    fn open(config: &SessionConfig, manual: &ManualActivation) -> Result<Self, SessionError> {
        match &config.source {
            SourceSpec::Synthetic { phantom, subject } => Ok(Feed::Synthetic {
                phantom: Arc::new(Phantom::new(*phantom)?),
                subject: Box::new(VirtualSubject::new(*subject, config.seed)),
            }),
            SourceSpec::Manual { phantom } => {
                Ok(Feed::Manual { phantom: Arc::new(Phantom::new(*phantom)?), input: manual.clone() })
            }
            SourceSpec::Replay { path } => Ok(Feed::Replay { source: ReplaySource::open(path)?, pending: None }),
            SourceSpec::CaptureStub { device } => {
                CaptureStub::new(device.clone()).next_frame()?;
                Err(SessionError::DeviceUnavailable(device.clone()))
            }
        }
    }

    /// Timestamp the next frame will carry, `None` when exhausted.
    fn next_time(&mut self, clock: f64) -> Result<Option<f64>, SessionError> {
        match self {
            Feed::Replay { source, pending } => {
                if pending.is_none() {
                    *pending = source.next_frame()?;
                }
                Ok(pending.as_ref().map(Frame::timestamp))
            }
            _ => Ok(Some(clock)),
        }
    }

    fn frame(&mut self, t: f64, mode: Mode<'_>) -> Result<Option<Frame>, SessionError> {
        match self {
            Feed::Synthetic { phantom, subject } => {
                let a = match mode {
                    Mode::Calibration { rel, plan } => subject.calibration_activation(rel, plan),
                    Mode::Task => subject.activation(t),
                };
                Ok(Some(phantom.render(a, t)?))
            }
            Feed::Manual { phantom, input } => Ok(Some(phantom.render(input.get(), t)?)),
            Feed::Replay { source, pending } => match pending.take() {
                Some(f) => Ok(Some(f)),
                None => source.next_frame(),
            },
        }
    }

    fn present(&mut self, target: sonomyo::task::Target, t: f64) {
        if let Feed::Synthetic { subject, .. } = self {
            subject.present(target, t);
        }
    }

    fn observe(&mut self, cursor: &sonomyo::normalization::CursorSample) {
        if let Feed::Synthetic { subject, .. } = self {
            subject.observe(cursor);
        }
    }
}

enum Stage {
    Calibrating { cal: Calibrator, start: Option<f64>, announced: usize, then_session: bool },
    Running { runner: Box<SessionRunner>, log_path: Option<PathBuf> },
}

struct Activity {
    config: SessionConfig,
    feed: Feed,
    stage: Stage,
    paced_from: Instant,
    paced_frames: u64,
}

/// Publishes stream messages and keeps the shared status current.
struct Out {
    hub: Arc<Hub>,
    shared: Arc<Shared>,
}

impl Out {
    fn status(&self, t: f64, f: impl FnOnce(&mut Status)) {
        let status = {
            let mut s = self.shared.status.lock().expect("status lock");
            f(&mut s);
            s.clone()
        };
        self.hub.publish(&StreamMessage::Status { timestamp: t, status });
    }

    fn prompt(&self, t: f64, text: &str, cue: &str) {
        self.hub.publish(&StreamMessage::Prompt { timestamp: t, text: text.into(), cue: cue.into() });
    }

    fn outputs(&self, feed: &mut Feed, outputs: &[DriverOutput]) {
        for out in outputs {
            match out {
                DriverOutput::Event { trial, target, event } => {
                    let t = event.timestamp;
                    match event.kind {
                        TrialEventKind::Presented => {
                            feed.present(*target, t);
                            self.hub.publish(&StreamMessage::Target {
                                timestamp: t,
                                trial: *trial,
                                center: target.center,
                                half_width: target.half_width,
                            });
                            let text =
                                if target.is_reset() { "Relax to return to rest" } else { "Move into the target" };
                            self.prompt(t, text, "present");
                            let trial = *trial;
                            self.status(t, |s| s.trial = Some(trial));
                        }
                        TrialEventKind::Success => self.prompt(t, "Target acquired", "success"),
                        TrialEventKind::Timeout => self.prompt(t, "Time is up", "timeout"),
                        _ => {}
                    }
                    self.hub.publish(&StreamMessage::TrialEvent {
                        timestamp: t,
                        trial: *trial,
                        target: *target,
                        event: *event,
                    });
                }
                DriverOutput::TrialCompleted(r) => self.status(r.presented_at, |s| s.completed_trials += 1),
            }
        }
    }
}

pub(crate) struct Lane {
    base: SessionConfig,
    speed: f64,
    log_dir: Option<PathBuf>,
    db: Option<TrainingDatabase>,
    out: Out,
    clock: f64,
    sessions: u64,
    activity: Option<Activity>,
}

fn wall_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn exhausted() -> SessionError {
    SessionError::Recording("source is exhausted".into())
}

fn cue_of(phase: CalibrationPhase) -> &'static str {
    match phase {
        CalibrationPhase::Flex => "flex",
        CalibrationPhase::Rest => "rest",
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Idle => "idle",
        Phase::Calibrating => "calibrating",
        Phase::Running => "running",
    }
}

impl Lane {
    pub fn new(base: SessionConfig, speed: f64, log_dir: Option<PathBuf>, hub: Arc<Hub>, shared: Arc<Shared>) -> Self {
        Self { base, speed, log_dir, db: None, out: Out { hub, shared }, clock: 0.0, sessions: 0, activity: None }
    }

    pub fn run(mut self, rx: Receiver<Request>) {
        loop {
            let request = match self.wait_budget() {
                None => match rx.recv() {
                    Ok(r) => Some(r),
                    Err(_) => break,
                },
                Some(d) if d.is_zero() => match rx.try_recv() {
                    Ok(r) => Some(r),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => break,
                },
                Some(d) => match rx.recv_timeout(d) {
                    Ok(r) => Some(r),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                },
            };
            match request {
                Some(r) => {
                    let result = self.handle(r.command);
                    let _ = r.reply.send(result);
                }
                None => {
                    if let Err(e) = self.step() {
                        self.fail(e);
                    }
                }
            }
        }
        if self.activity.is_some() {
            let _ = self.abort();
        }
    }

    /// Time until the next frame is due; `None` when nothing is running.
    fn wait_budget(&self) -> Option<Duration> {
        let a = self.activity.as_ref()?;
        if self.speed <= 0.0 {
            return Some(Duration::ZERO);
        }
        let due = a.paced_frames as f64 / (a.config.frame_rate * self.speed);
        let elapsed = a.paced_from.elapsed().as_secs_f64();
        Some(Duration::from_secs_f64((due - elapsed).max(0.0)))
    }

    fn phase(&self) -> Phase {
        self.out.shared.status.lock().expect("status lock").phase
    }

    fn handle(&mut self, command: ControlCommand) -> Result<Status, ControlError> {
        match command {
            ControlCommand::GetStatus => {}
            ControlCommand::SetSource { source } => {
                self.require_idle("set_source")?;
                let config = SessionConfig { source, ..self.base.clone() };
                config.validate().map_err(|e| ControlError::Invalid(e.to_string()))?;
                self.replace_config(config);
            }
            ControlCommand::StartCalibration { config } => {
                self.require_idle("start_calibration")?;
                if let Some(c) = config {
                    c.validate().map_err(|e| ControlError::Invalid(e.to_string()))?;
                    self.replace_config(c);
                }
                self.begin_calibration(self.base.clone(), false)?;
            }
            ControlCommand::StartSession { config, seed } => {
                self.require_idle("start_session")?;
                if let Some(c) = config {
                    c.validate().map_err(|e| ControlError::Invalid(e.to_string()))?;
                    self.replace_config(c);
                }
                let mut config = self.base.clone();
                if let Some(s) = seed {
                    config.seed = s;
                }
                if self.db.is_some() {
                    let feed = Feed::open(&config, &self.out.shared.manual)
                        .map_err(|e| ControlError::Failed(e.to_string()))?;
                    self.begin_session(config, feed, (Instant::now(), 0))
                        .map_err(|e| ControlError::Failed(e.to_string()))?;
                } else {
                    self.begin_calibration(config, true)?;
                }
            }
            ControlCommand::Abort => {
                if self.activity.is_none() {
                    return Err(ControlError::Illegal("nothing to abort while idle".into()));
                }
                self.abort().map_err(|e| ControlError::Failed(e.to_string()))?;
            }
        }
        Ok(self.out.shared.status())
    }

    fn require_idle(&self, what: &str) -> Result<(), ControlError> {
        match self.phase() {
            Phase::Idle => Ok(()),
            p => Err(ControlError::Illegal(format!("{what} is not allowed while {}", phase_name(p)))),
        }
    }

    fn replace_config(&mut self, config: SessionConfig) {
        if config.source != self.base.source || config.calibration != self.base.calibration {
            self.db = None;
        }
        let manual = matches!(config.source, SourceSpec::Manual { .. });
        self.out.shared.manual_enabled.store(manual, Ordering::SeqCst);
        let kind = config.source.kind();
        let calibrated = self.db.is_some();
        self.base = config;
        self.out.status(self.clock, |s| {
            s.source = kind.into();
            s.calibrated = calibrated;
        });
    }

    fn begin_calibration(&mut self, config: SessionConfig, then_session: bool) -> Result<(), ControlError> {
        let feed = Feed::open(&config, &self.out.shared.manual).map_err(|e| ControlError::Failed(e.to_string()))?;
        let cal = Calibrator::new(config.calibration.clone()).map_err(|e| ControlError::Invalid(e.to_string()))?;
        tracing::info!(source = config.source.kind(), "calibration started");
        self.activity = Some(Activity {
            config,
            feed,
            stage: Stage::Calibrating { cal, start: None, announced: 0, then_session },
            paced_from: Instant::now(),
            paced_frames: 0,
        });
        self.out.status(self.clock, |s| s.phase = Phase::Calibrating);
        Ok(())
    }

    fn begin_session(
        &mut self,
        config: SessionConfig,
        mut feed: Feed,
        (paced_from, paced_frames): (Instant, u64),
    ) -> Result<(), SessionError> {
        let db = self.db.as_ref().expect("calibrated before session");
        let pipeline = Pipeline::new(&db.refs, config.tracker, config.pipeline.orientation)?;
        let plan = build_session_plan(config.seed, &config.plan)?;
        let task_start = feed.next_time(self.clock)?.ok_or_else(exhausted)?;
        self.sessions += 1;
        let session = format!("{}-{}-{}", config.group, config.seed, self.sessions);
        let mut header = LogHeader {
            version: LOG_VERSION,
            group: config.group.clone(),
            session: session.clone(),
            config: config.clone(),
            plan,
            task_start,
            initial_bounds: pipeline.initial_bounds(),
            references: None,
        };
        let log_path = match &self.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(dir.join(format!("{session}.jsonl")))
            }
            None => config.output.resolved_log_path(),
        };
        let writer = match &log_path {
            Some(p) => {
                header.references = Some(write_references(p, db)?);
                Some(LogWriter::create(p, &header)?)
            }
            None => None,
        };
        let mut runner = SessionRunner::new(header, pipeline, writer);
        tracing::info!(%session, "session started");
        self.out.status(task_start, |s| {
            s.phase = Phase::Running;
            s.session = Some(session);
            s.trial = None;
            s.completed_trials = 0;
        });
        let outputs = runner.start();
        self.out.outputs(&mut feed, &outputs);
        self.activity = Some(Activity {
            config,
            feed,
            stage: Stage::Running { runner: Box::new(runner), log_path },
            paced_from,
            paced_frames,
        });
        Ok(())
    }

    fn step(&mut self) -> Result<(), SessionError> {
        let Some(activity) = self.activity.as_mut() else { return Ok(()) };
        activity.paced_frames += 1;
        let rate = activity.config.frame_rate;
        let t = activity.feed.next_time(self.clock)?.ok_or_else(exhausted)?;
        match &mut activity.stage {
            Stage::Calibrating { cal, start, announced, .. } => {
                let plan = &activity.config.calibration;
                let rel = t - *start.get_or_insert(t);
                if rel >= plan.total_duration() {
                    return self.complete_calibration(t);
                }
                while let Some(&(phase, at)) = plan.prompt_schedule.get(*announced) {
                    if at > rel {
                        break;
                    }
                    self.out.prompt(t, phase.prompt(), cue_of(phase));
                    *announced += 1;
                }
                let frame = activity.feed.frame(t, Mode::Calibration { rel, plan })?.ok_or_else(exhausted)?;
                cal.push(frame.with_timestamp(rel))?;
            }
            Stage::Running { runner, .. } => {
                let frame = activity.feed.frame(t, Mode::Task)?.ok_or_else(exhausted)?;
                let (record, outputs) = runner.push_frame(&frame)?;
                activity.feed.observe(&record.cursor());
                self.out.hub.publish(&StreamMessage::Cursor {
                    timestamp: record.t,
                    position: record.position,
                    s_norm: record.s_norm,
                });
                self.out.outputs(&mut activity.feed, &outputs);
                self.clock = t + 1.0 / rate;
                if runner.is_finished() {
                    return self.finish_session(false, None);
                }
                return Ok(());
            }
        }
        self.clock = t + 1.0 / rate;
        Ok(())
    }

    fn complete_calibration(&mut self, t: f64) -> Result<(), SessionError> {
        let activity = self.activity.take().expect("calibration activity");
        let Stage::Calibrating { cal, then_session, .. } = activity.stage else { unreachable!("not calibrating") };
        let db = match cal.finish(wall_seconds()) {
            Ok(db) => db,
            Err(e) => {
                self.out.prompt(t, &format!("Calibration failed: {e}"), "error");
                self.out.status(t, |s| s.phase = Phase::Idle);
                return Ok(());
            }
        };
        self.db = Some(db);
        tracing::info!("calibration finished");
        self.out.prompt(t, "Calibration complete", "calibrated");
        if then_session {
            let pacing = (activity.paced_from, activity.paced_frames - 1);
            if let Err(e) = self.begin_session(activity.config, activity.feed, pacing) {
                self.out.prompt(t, &format!("Session failed to start: {e}"), "error");
                self.out.status(t, |s| {
                    s.phase = Phase::Idle;
                    s.calibrated = true;
                });
            } else {
                self.out.status(t, |s| s.calibrated = true);
            }
        } else {
            self.out.status(t, |s| {
                s.phase = Phase::Idle;
                s.calibrated = true;
            });
        }
        Ok(())
    }

    fn finish_session(&mut self, aborted: bool, error: Option<String>) -> Result<(), SessionError> {
        let Some(activity) = self.activity.take() else { return Ok(()) };
        let t = self.clock;
        match activity.stage {
            Stage::Calibrating { .. } => {
                if let Some(e) = &error {
                    self.out.prompt(t, &format!("Calibration failed: {e}"), "error");
                }
                self.out.status(t, |s| s.phase = Phase::Idle);
                Ok(())
            }
            Stage::Running { runner, log_path } => {
                let session = runner.log().header.session.clone();
                let result = runner.finish();
                let (trials, successes) = match &result {
                    Ok(log) => (log.trials.len(), log.trials.iter().filter(|r| r.succeeded).count()),
                    Err(_) => (0, 0),
                };
                let error = error.or_else(|| result.as_ref().err().map(ToString::to_string));
                tracing::info!(%session, trials, aborted, "session ended");
                let summary = SessionSummary { session, trials, successes, aborted, log_path, error };
                self.out.status(t, |s| {
                    s.phase = Phase::Idle;
                    s.trial = None;
                    s.last_session = Some(summary);
                });
                result.map(|_| ())
            }
        }
    }

    fn abort(&mut self) -> Result<(), SessionError> {
        if let Some(Activity { stage: Stage::Running { runner, .. }, .. }) = self.activity.as_mut() {
            if let Some(trial) = runner.abort()? {
                let text = format!("Trial {} aborted", trial.index + 1);
                self.out.prompt(self.clock, &text, "aborted");
                self.out.status(self.clock, |s| s.completed_trials += 1);
            }
        }
        self.finish_session(true, None)
    }

    fn fail(&mut self, e: SessionError) {
        tracing::error!("processing lane error: {e}");
        if let Some(Activity { stage: Stage::Running { runner, .. }, .. }) = self.activity.as_mut() {
            let _ = runner.abort();
        }
        if let Err(e) = self.finish_session(true, Some(e.to_string())) {
            tracing::error!("could not close session: {e}");
        }
    }
}
