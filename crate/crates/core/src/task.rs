//! Target-achievement task: plan construction and the per-trial state machine.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalization::CursorSample;

/// Displacement from the trial's first sample that counts as movement onset.
pub const ONSET_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("sample at t={got} does not follow t={last}")]
    OutOfOrder { last: f64, got: f64 },
    #[error("trial already finished")]
    Finished,
    #[error("target center {center} with half width {half_width} does not fit the screen")]
    InvalidTarget { center: f64, half_width: f64 },
    #[error("sample stream ended before trial {index} finished")]
    Aborted { index: usize, record: Box<TrialRecord> },
    #[error("invalid plan configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub center: f64,
    pub half_width: f64,
}

impl Target {
    pub fn new(center: f64, half_width: f64) -> Result<Self, TaskError> {
        let fits = half_width > 0.0 && center - half_width >= -1e-12 && center + half_width <= 1.0 + 1e-12;
        if !fits {
            return Err(TaskError::InvalidTarget { center, half_width });
        }
        Ok(Self { center, half_width })
    }

    /// Return-to-rest target at 0 %; its band is `[0, half_width]`.
    pub fn reset(half_width: f64) -> Self {
        Self { center: 0.0, half_width }
    }

    pub fn is_reset(&self) -> bool {
        self.center == 0.0
    }

    pub fn band(&self) -> (f64, f64) {
        ((self.center - self.half_width).max(0.0), (self.center + self.half_width).min(1.0))
    }

    pub fn contains(&self, position: f64) -> bool {
        let (lo, hi) = self.band();
        position >= lo && position <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub levels: usize,
    pub spacing: f64,
    pub half_width: f64,
    pub dwell_required: f64,
    pub trial_timeout: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { levels: 9, spacing: 0.10, half_width: 0.05, dwell_required: 1.5, trial_timeout: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub targets: Vec<Target>,
    pub dwell_required: f64,
    pub trial_timeout: f64,
    pub rng_seed: u64,
}

impl SessionPlan {
    pub fn task_trials(&self) -> impl Iterator<Item = &Target> {
        self.targets.iter().filter(|t| !t.is_reset())
    }
}

/// Shuffles the target levels under `seed` and interleaves a reset after each.
pub fn build_session_plan(seed: u64, config: &PlanConfig) -> Result<SessionPlan, TaskError> {
    if config.levels == 0 {
        return Err(TaskError::Config("at least one target level"));
    }
    if !(config.dwell_required > 0.0 && config.trial_timeout > config.dwell_required) {
        return Err(TaskError::Config("dwell must be positive and shorter than the timeout"));
    }
    let mut levels = (1..=config.levels)
        .map(|i| Target::new(i as f64 * config.spacing, config.half_width))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    levels.shuffle(&mut rng);
    let targets = levels.into_iter().flat_map(|t| [t, Target::reset(config.half_width)]).collect();
    Ok(SessionPlan {
        targets,
        dwell_required: config.dwell_required,
        trial_timeout: config.trial_timeout,
        rng_seed: seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialEventKind {
    Presented,
    MovementOnset,
    BandEntry,
    BandExit,
    Success,
    Timeout,
}

impl TrialEventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Success | Self::Timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub kind: TrialEventKind,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub target: Target,
    pub presented_at: f64,
    pub dwell_required: f64,
    pub samples: Vec<CursorSample>,
    pub events: Vec<TrialEvent>,
    pub succeeded: bool,
    #[serde(default)]
    pub aborted: bool,
}

impl TrialRecord {
    pub fn first_event(&self, kind: TrialEventKind) -> Option<&TrialEvent> {
        self.events.iter().find(|e| e.kind == kind)
    }

    pub fn terminal_event(&self) -> Option<&TrialEvent> {
        self.events.iter().find(|e| e.kind.is_terminal())
    }
}

/// Result of feeding one sample to a [`TrialMachine`].
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Continue(Vec<TrialEvent>),
    /// The trial ended. A sample stamped after the terminal event is handed
    /// back so it can open the next trial.
    Finished {
        events: Vec<TrialEvent>,
        leftover: Option<CursorSample>,
    },
}

/// Dwell/timeout state machine for one target presentation.
///
/// The in-band predicate is evaluated per sample and held until the next
/// sample arrives, so success is stamped at exactly `entry + dwell`.
#[derive(Debug, Clone)]
pub struct TrialMachine {
    record: TrialRecord,
    trial_timeout: f64,
    start_position: Option<f64>,
    onset_seen: bool,
    in_band_since: Option<f64>,
    last_t: Option<f64>,
    finished: bool,
}

impl TrialMachine {
    pub fn new(index: usize, target: Target, presented_at: f64, dwell_required: f64, trial_timeout: f64) -> Self {
        let record = TrialRecord {
            index,
            target,
            presented_at,
            dwell_required,
            samples: Vec::new(),
            events: vec![TrialEvent { kind: TrialEventKind::Presented, timestamp: presented_at }],
            succeeded: false,
            aborted: false,
        };
        Self {
            record,
            trial_timeout,
            start_position: None,
            onset_seen: false,
            in_band_since: None,
            last_t: None,
            finished: false,
        }
    }

    pub fn presented_event(&self) -> TrialEvent {
        self.record.events[0]
    }

    pub fn target(&self) -> Target {
        self.record.target
    }

    pub fn index(&self) -> usize {
        self.record.index
    }

    pub fn deadline(&self) -> f64 {
        self.record.presented_at + self.trial_timeout
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn step(&mut self, sample: CursorSample) -> Result<Step, TaskError> {
        if self.finished {
            return Err(TaskError::Finished);
        }
        let t = sample.timestamp;
        let last = self.last_t.unwrap_or(self.record.presented_at);
        let ordered = match self.last_t {
            Some(prev) => t > prev,
            None => t >= self.record.presented_at,
        };
        if !ordered || !t.is_finite() {
            return Err(TaskError::OutOfOrder { last, got: t });
        }

        let deadline = self.deadline();
        if let Some(entry) = self.in_band_since {
            let done = entry + self.record.dwell_required;
            if done <= t && done <= deadline {
                return Ok(self.finish(TrialEventKind::Success, done, sample));
            }
        }
        if t >= deadline {
            return Ok(self.finish(TrialEventKind::Timeout, deadline, sample));
        }

        self.last_t = Some(t);
        self.record.samples.push(sample);
        let mut events = Vec::new();
        let start = *self.start_position.get_or_insert(sample.position);
        if !self.onset_seen && (sample.position - start).abs() >= ONSET_THRESHOLD {
            self.onset_seen = true;
            events.push(TrialEvent { kind: TrialEventKind::MovementOnset, timestamp: t });
        }
        let inside = self.record.target.contains(sample.position);
        match (self.in_band_since, inside) {
            (None, true) => {
                self.in_band_since = Some(t);
                events.push(TrialEvent { kind: TrialEventKind::BandEntry, timestamp: t });
            }
            (Some(_), false) => {
                self.in_band_since = None;
                events.push(TrialEvent { kind: TrialEventKind::BandExit, timestamp: t });
            }
            _ => {}
        }
        self.record.events.extend_from_slice(&events);
        Ok(Step::Continue(events))
    }

    fn finish(&mut self, kind: TrialEventKind, at: f64, sample: CursorSample) -> Step {
        self.finished = true;
        self.record.succeeded = kind == TrialEventKind::Success;
        let event = TrialEvent { kind, timestamp: at };
        self.record.events.push(event);
        let leftover = if sample.timestamp <= at {
            self.last_t = Some(sample.timestamp);
            self.record.samples.push(sample);
            None
        } else {
            Some(sample)
        };
        Step::Finished { events: vec![event], leftover }
    }

    pub fn terminal_time(&self) -> Option<f64> {
        self.record.terminal_event().map(|e| e.timestamp)
    }

    pub fn into_record(self) -> TrialRecord {
        self.record
    }

    /// Closes an unfinished trial as aborted.
    pub fn abort(mut self) -> TrialRecord {
        if !self.finished {
            self.record.aborted = true;
            self.record.succeeded = false;
        }
        self.record
    }
}

/// Runs one trial over `source` until it terminates.
///
/// Returns the record and any sample that arrived after the terminal event.
pub fn run_trial<I>(
    source: &mut I,
    index: usize,
    target: Target,
    presented_at: f64,
    config: &PlanConfig,
) -> Result<(TrialRecord, Option<CursorSample>), TaskError>
where
    I: Iterator<Item = CursorSample>,
{
    let mut machine = TrialMachine::new(index, target, presented_at, config.dwell_required, config.trial_timeout);
    for sample in source.by_ref() {
        if let Step::Finished { leftover, .. } = machine.step(sample)? {
            return Ok((machine.into_record(), leftover));
        }
    }
    Err(TaskError::Aborted { index, record: Box::new(machine.abort()) })
}

/// Output of the [`SessionDriver`].
#[derive(Debug, Clone, PartialEq)]
pub enum DriverOutput {
    Event { trial: usize, target: Target, event: TrialEvent },
    TrialCompleted(TrialRecord),
}

/// Walks a [`SessionPlan`], opening each trial at the previous trial's
/// terminal time.
#[derive(Debug, Clone)]
pub struct SessionDriver {
    plan: SessionPlan,
    next_index: usize,
    current: Option<TrialMachine>,
}

impl SessionDriver {
    pub fn new(plan: SessionPlan) -> Self {
        Self { plan, next_index: 0, current: None }
    }

    pub fn plan(&self) -> &SessionPlan {
        &self.plan
    }

    /// Presents the first target at `t0`.
    pub fn start(&mut self, t0: f64) -> Vec<DriverOutput> {
        let mut out = Vec::new();
        self.open_next(t0, &mut out);
        out
    }

    pub fn is_finished(&self) -> bool {
        self.current.is_none() && self.next_index >= self.plan.targets.len()
    }

    pub fn current_target(&self) -> Option<Target> {
        self.current.as_ref().map(TrialMachine::target)
    }

    pub fn current_index(&self) -> Option<usize> {
        self.current.as_ref().map(TrialMachine::index)
    }

    fn open_next(&mut self, at: f64, out: &mut Vec<DriverOutput>) {
        if let Some(target) = self.plan.targets.get(self.next_index).copied() {
            let machine =
                TrialMachine::new(self.next_index, target, at, self.plan.dwell_required, self.plan.trial_timeout);
            out.push(DriverOutput::Event { trial: self.next_index, target, event: machine.presented_event() });
            self.current = Some(machine);
            self.next_index += 1;
        }
    }

    pub fn push(&mut self, sample: CursorSample) -> Result<Vec<DriverOutput>, TaskError> {
        let mut out = Vec::new();
        let mut pending = Some(sample);
        while let Some(sample) = pending.take() {
            let Some(machine) = self.current.as_mut() else { break };
            let (trial, target) = (machine.index(), machine.target());
            match machine.step(sample)? {
                Step::Continue(events) => {
                    out.extend(events.into_iter().map(|event| DriverOutput::Event { trial, target, event }));
                }
                Step::Finished { events, leftover } => {
                    out.extend(events.into_iter().map(|event| DriverOutput::Event { trial, target, event }));
                    let machine = self.current.take().expect("current trial");
                    let end = machine.terminal_time().unwrap_or(sample.timestamp);
                    out.push(DriverOutput::TrialCompleted(machine.into_record()));
                    self.open_next(end, &mut out);
                    pending = leftover;
                }
            }
        }
        Ok(out)
    }

    /// Aborts the running trial, if any, and stops the plan.
    pub fn abort(&mut self) -> Option<TrialRecord> {
        self.next_index = self.plan.targets.len();
        self.current.take().map(TrialMachine::abort)
    }
}

/// Replays `samples` through a fresh driver and collects the completed trials.
pub fn run_plan<I>(plan: &SessionPlan, t0: f64, samples: I) -> Result<Vec<TrialRecord>, TaskError>
where
    I: IntoIterator<Item = CursorSample>,
{
    let mut driver = SessionDriver::new(plan.clone());
    driver.start(t0);
    let mut trials = Vec::new();
    for sample in samples {
        if driver.is_finished() {
            break;
        }
        for output in driver.push(sample)? {
            if let DriverOutput::TrialCompleted(record) = output {
                trials.push(record);
            }
        }
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(t: f64, p: f64) -> CursorSample {
        CursorSample { position: p, s_norm: 1.0 - p, timestamp: t }
    }

    fn stream(dt: f64, until: f64, f: impl Fn(f64) -> f64) -> Vec<CursorSample> {
        let n = (until / dt).round() as usize;
        (0..=n).map(|i| i as f64 * dt).map(|t| cs(t, f(t))).collect()
    }

    fn terminal(rec: &TrialRecord) -> TrialEvent {
        *rec.terminal_event().unwrap()
    }

    #[test]
    fn plan_is_deterministic_permutation() {
        let cfg = PlanConfig::default();
        let a = build_session_plan(11, &cfg).unwrap();
        let b = build_session_plan(11, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.targets.len(), 18);
        let mut centers: Vec<i64> = a.task_trials().map(|t| (t.center * 100.0).round() as i64).collect();
        centers.sort();
        assert_eq!(centers, (1..=9).map(|i| i * 10).collect::<Vec<_>>());
        for pair in a.targets.chunks(2) {
            assert!(!pair[0].is_reset());
            assert!(pair[1].is_reset());
        }
        let c = build_session_plan(12, &cfg).unwrap();
        assert_ne!(a.targets, c.targets);
    }

    #[test]
    fn reset_band() {
        let r = Target::reset(0.05);
        assert_eq!(r.band(), (0.0, 0.05));
        assert!(r.contains(0.0));
        assert!(!r.contains(0.051));
        assert!(Target::new(0.02, 0.05).is_err());
    }

    #[test]
    fn success_after_continuous_dwell() {
        let target = Target::new(0.5, 0.05).unwrap();
        let samples = stream(0.05, 12.0, |t| if t >= 2.0 { 0.5 } else { 0.0 });
        let (rec, leftover) = run_trial(&mut samples.into_iter(), 0, target, 0.0, &PlanConfig::default()).unwrap();
        assert!(rec.succeeded);
        let end = terminal(&rec);
        assert_eq!(end.kind, TrialEventKind::Success);
        assert!((end.timestamp - 3.5).abs() < 1e-12);
        assert!(leftover.is_none() || leftover.unwrap().timestamp > end.timestamp);
        let entry = rec.first_event(TrialEventKind::BandEntry).unwrap();
        assert!((entry.timestamp - 2.0).abs() < 1e-9);
    }

    #[test]
    fn dwell_restarts_after_exit() {
        let target = Target::new(0.5, 0.05).unwrap();
        let pos = |t: f64| {
            if (1.0..2.4).contains(&t) || t >= 3.0 {
                0.5
            } else {
                0.0
            }
        };
        let samples: Vec<_> = (0..=240).map(|i| i as f64 * 0.05).map(|t| cs(t, pos(t))).collect();
        let (rec, _) = run_trial(&mut samples.into_iter(), 0, target, 0.0, &PlanConfig::default()).unwrap();
        let end = terminal(&rec);
        assert_eq!(end.kind, TrialEventKind::Success);
        assert!((end.timestamp - 4.5).abs() < 1e-9, "{}", end.timestamp);
        assert_eq!(rec.events.iter().filter(|e| e.kind == TrialEventKind::BandEntry).count(), 2);
        assert_eq!(rec.events.iter().filter(|e| e.kind == TrialEventKind::BandExit).count(), 1);
    }

    #[test]
    fn timeout_without_entry() {
        let target = Target::new(0.5, 0.05).unwrap();
        let samples = stream(0.05, 12.0, |_| 0.0);
        let (rec, leftover) = run_trial(&mut samples.into_iter(), 0, target, 0.0, &PlanConfig::default()).unwrap();
        assert!(!rec.succeeded);
        let end = terminal(&rec);
        assert_eq!(end.kind, TrialEventKind::Timeout);
        assert_eq!(end.timestamp, 10.0);
        assert!(rec.first_event(TrialEventKind::MovementOnset).is_none());
        assert!(leftover.is_none());
        assert!(rec.samples.last().unwrap().timestamp <= 10.0);
    }

    #[test]
    fn out_of_order_sample_rejected() {
        let mut m = TrialMachine::new(0, Target::new(0.5, 0.05).unwrap(), 1.0, 1.5, 10.0);
        m.step(cs(1.1, 0.0)).unwrap();
        assert!(matches!(m.step(cs(1.1, 0.0)), Err(TaskError::OutOfOrder { .. })));
        assert!(matches!(m.step(cs(0.5, 0.0)), Err(TaskError::OutOfOrder { .. })));
    }

    #[test]
    fn stream_ending_early_aborts() {
        let samples = stream(0.05, 2.0, |_| 0.0);
        let err = run_trial(&mut samples.into_iter(), 3, Target::new(0.5, 0.05).unwrap(), 0.0, &PlanConfig::default())
            .unwrap_err();
        match err {
            TaskError::Aborted { index, record } => {
                assert_eq!(index, 3);
                assert!(record.aborted && !record.succeeded);
                assert!(record.terminal_event().is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn onset_precedes_entry() {
        let target = Target::new(0.3, 0.05).unwrap();
        let samples = stream(0.05, 12.0, |t| (t * 0.1).min(0.3));
        let (rec, _) = run_trial(&mut samples.into_iter(), 0, target, 0.0, &PlanConfig::default()).unwrap();
        let onset = rec.first_event(TrialEventKind::MovementOnset).unwrap().timestamp;
        let entry = rec.first_event(TrialEventKind::BandEntry).unwrap().timestamp;
        assert!(onset < entry);
        assert!((onset - 0.5).abs() < 1e-9);
    }

    #[test]
    fn driver_runs_full_plan() {
        let plan = build_session_plan(5, &PlanConfig::default()).unwrap();
        // A cursor that jumps straight to each target.
        let mut driver = SessionDriver::new(plan.clone());
        let mut outputs = driver.start(0.0);
        let mut t = 0.0;
        while !driver.is_finished() {
            t += 0.05;
            let pos = driver.current_target().unwrap().center;
            outputs.extend(driver.push(cs(t, pos)).unwrap());
        }
        let presented = outputs
            .iter()
            .filter(|o| matches!(o, DriverOutput::Event { event, .. } if event.kind == TrialEventKind::Presented))
            .count();
        let completed: Vec<_> = outputs
            .iter()
            .filter_map(|o| match o {
                DriverOutput::TrialCompleted(r) => Some(r),
                _ => None,
            })
            .collect();
        assert_eq!(presented, 18);
        assert_eq!(completed.len(), 18);
        assert!(completed.iter().all(|r| r.succeeded));
        for pair in completed.windows(2) {
            assert_eq!(pair[1].presented_at, pair[0].terminal_event().unwrap().timestamp);
        }
    }
}
