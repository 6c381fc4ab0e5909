//! Frame-to-task plumbing shared by live sessions and simulation.

use super::log::{FrameRecord, LogHeader, LogWriter, SessionLog};
use super::SessionError;
use crate::frame::{Frame, FrameError, ReferencePair, SignalProcessor, SonomyoSample};
use crate::normalization::{map_to_cursor, normalize, BoundTracker, Bounds, Orientation, TrackerParams};
use crate::task::{DriverOutput, SessionDriver, TrialRecord};

/// Frame → raw signal → normalized signal → cursor.
#[derive(Debug, Clone)]
pub struct Pipeline {
    processor: SignalProcessor,
    tracker: BoundTracker,
    orientation: Orientation,
    initial: Bounds,
    last: Option<SonomyoSample>,
}

impl Pipeline {
    /// Initial bounds are the raw signal of the two reference frames.
    pub fn new(refs: &ReferencePair, tracker: TrackerParams, orientation: Orientation) -> Result<Self, SessionError> {
        let processor = SignalProcessor::new(refs);
        let at_rest = processor.process(refs.rest_raw())?.s_raw;
        let at_motion = processor.process(refs.motion_raw())?.s_raw;
        let initial = Bounds::from_extremes(at_rest, at_motion)?;
        let tracker = BoundTracker::new(initial, tracker)?;
        Ok(Self { processor, tracker, orientation, initial, last: None })
    }

    pub fn initial_bounds(&self) -> Bounds {
        self.initial
    }

    pub fn bounds(&self) -> Bounds {
        self.tracker.bounds()
    }

    /// Processes one frame. When the signal is undefined the previous raw
    /// value is reused and the record is flagged as held.
    pub fn process(&mut self, frame: &Frame) -> Result<FrameRecord, SessionError> {
        let t = frame.timestamp();
        let (sample, held) = match self.processor.process(frame) {
            Ok(s) => (s, false),
            Err(e @ (FrameError::DegenerateSignal | FrameError::DegenerateCorrelation)) => match self.last {
                Some(last) => (SonomyoSample { timestamp: t, ..last }, true),
                None => return Err(e.into()),
            },
            Err(e) => return Err(e.into()),
        };
        self.last = Some(sample);
        let bounds = if held { self.tracker.bounds() } else { self.tracker.update(sample.s_raw) };
        let s_norm = normalize(sample.s_raw, &bounds);
        let cursor = map_to_cursor(s_norm, self.orientation, t);
        Ok(FrameRecord {
            t,
            s_raw: sample.s_raw,
            c_rest: sample.c_rest,
            c_motion: sample.c_motion,
            lower: bounds.lower(),
            upper: bounds.upper(),
            s_norm: cursor.s_norm,
            position: cursor.position,
            held,
        })
    }
}

/// Runs a session plan over a frame stream, recording everything.
pub struct SessionRunner {
    pipeline: Pipeline,
    driver: SessionDriver,
    log: SessionLog,
    writer: Option<LogWriter>,
}

impl SessionRunner {
    pub fn new(header: LogHeader, pipeline: Pipeline, writer: Option<LogWriter>) -> Self {
        let driver = SessionDriver::new(header.plan.clone());
        Self { pipeline, driver, log: SessionLog { header, frames: Vec::new(), trials: Vec::new() }, writer }
    }

    /// Presents the first target at the header's task start.
    pub fn start(&mut self) -> Vec<DriverOutput> {
        self.driver.start(self.log.header.task_start)
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn driver(&self) -> &SessionDriver {
        &self.driver
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.driver.is_finished()
    }

    fn record_trial(&mut self, record: &TrialRecord) -> Result<(), SessionError> {
        self.log.trials.push(record.clone());
        if let Some(w) = self.writer.as_mut() {
            w.trial(record)?;
        }
        Ok(())
    }

    pub fn push_frame(&mut self, frame: &Frame) -> Result<(FrameRecord, Vec<DriverOutput>), SessionError> {
        let record = self.pipeline.process(frame)?;
        self.log.frames.push(record);
        if let Some(w) = self.writer.as_mut() {
            w.frame(&record)?;
        }
        let outputs = if self.driver.is_finished() { Vec::new() } else { self.driver.push(record.cursor())? };
        for out in &outputs {
            if let DriverOutput::TrialCompleted(trial) = out {
                self.record_trial(trial)?;
            }
        }
        Ok((record, outputs))
    }

    /// Ends the session early; the running trial is logged as aborted.
    pub fn abort(&mut self) -> Result<Option<TrialRecord>, SessionError> {
        let aborted = self.driver.abort();
        if let Some(trial) = &aborted {
            self.record_trial(trial)?;
        }
        Ok(aborted)
    }

    pub fn finish(self) -> Result<SessionLog, SessionError> {
        if let Some(w) = self.writer {
            w.finish()?;
        }
        Ok(self.log)
    }
}
