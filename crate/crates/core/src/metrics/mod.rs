//! Per-trial outcome measures.
//!
//! All quantities are derived from a recorded [`TrialRecord`] only, so they can
//! be recomputed from a replayed session log.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minjerk;
use crate::task::{Target, TrialEvent, TrialEventKind, TrialRecord};

pub mod fitts;
pub mod report;
pub mod stats;

pub use fitts::{fitts_fit, fitts_points, FittsFit, IdForm};
pub use minjerk::min_jerk_reference;
pub use stats::{friedman_test, mann_whitney_u, Alternative, FriedmanResult, MannWhitney};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory needs at least two samples, got {0}")]
    TooShort(usize),
    #[error("trajectory timestamps are not increasing at index {0}")]
    NotMonotone(usize),
    #[error("no trials to summarize")]
    Empty,
    #[error("regression is degenerate: {0}")]
    DegenerateRegression(&'static str),
    #[error("invalid statistical input: {0}")]
    InvalidInput(String),
}

/// Time-ordered cursor positions of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub target: Target,
    pub presented_at: f64,
    pub dwell_required: f64,
    pub events: Vec<TrialEvent>,
}

impl Trajectory {
    pub fn new(
        samples: &[(f64, f64)],
        target: Target,
        presented_at: f64,
        dwell_required: f64,
        events: Vec<TrialEvent>,
    ) -> Result<Self, MetricsError> {
        if samples.len() < 2 {
            return Err(MetricsError::TooShort(samples.len()));
        }
        if let Some(i) = samples.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(MetricsError::NotMonotone(i + 1));
        }
        Ok(Self {
            times: samples.iter().map(|s| s.0).collect(),
            positions: samples.iter().map(|s| s.1).collect(),
            target,
            presented_at,
            dwell_required,
            events,
        })
    }

    pub fn from_record(record: &TrialRecord) -> Result<Self, MetricsError> {
        let samples: Vec<(f64, f64)> = record.samples.iter().map(|s| (s.timestamp, s.position)).collect();
        Self::new(&samples, record.target, record.presented_at, record.dwell_required, record.events.clone())
    }

    fn event_time(&self, kind: TrialEventKind) -> Option<f64> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.timestamp)
    }

    /// Index of the sample at which the cursor first entered the band.
    fn entry_index(&self) -> Option<usize> {
        let t = self.event_time(TrialEventKind::BandEntry)?;
        self.times.iter().position(|&s| s >= t)
    }

    /// Samples inside the dwell window that produced success.
    fn dwell_window(&self) -> Option<Vec<f64>> {
        let end = self.event_time(TrialEventKind::Success)?;
        let start = end - self.dwell_required;
        let window: Vec<f64> = self
            .times
            .iter()
            .zip(&self.positions)
            .filter(|(t, _)| **t >= start - 1e-9 && **t <= end + 1e-9)
            .map(|(_, p)| *p)
            .collect();
        (!window.is_empty()).then_some(window)
    }
}

/// Seconds from presentation to movement onset.
pub fn reaction_time(traj: &Trajectory) -> Option<f64> {
    traj.event_time(TrialEventKind::MovementOnset).map(|t| t - traj.presented_at)
}

/// Seconds from presentation to the first band entry.
pub fn movement_time(traj: &Trajectory) -> Option<f64> {
    traj.event_time(TrialEventKind::BandEntry).map(|t| t - traj.presented_at)
}

/// Percentage of successful task trials; reset trials are not counted.
pub fn success_rate(trials: &[TrialRecord]) -> Result<f64, MetricsError> {
    let task: Vec<&TrialRecord> = trials.iter().filter(|t| !t.target.is_reset()).collect();
    if task.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = task.iter().filter(|t| t.succeeded).count();
    Ok(100.0 * hits as f64 / task.len() as f64)
}

/// Target position over the path length travelled up to first band entry, in
/// percent. Absent when the band was never entered or no distance was covered.
pub fn path_efficiency(traj: &Trajectory) -> Option<f64> {
    let entry = traj.entry_index()?;
    let length: f64 = traj.positions[..=entry].windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    (length > 0.0).then(|| 100.0 * traj.target.center / length)
}

/// Signed mean of `target − cursor` over the success dwell window, percent.
pub fn endpoint_error(traj: &Trajectory) -> Option<f64> {
    let window = traj.dwell_window()?;
    let n = window.len() as f64;
    Some(100.0 * window.iter().map(|p| traj.target.center - p).sum::<f64>() / n)
}

/// Population standard deviation of the cursor over the dwell window, percent.
pub fn endpoint_stability(traj: &Trajectory) -> Option<f64> {
    let window = traj.dwell_window()?;
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    Some(100.0 * var.sqrt())
}

/// Centered moving average whose window shrinks symmetrically at the edges,
/// so linear segments pass through unchanged.
pub fn moving_average(values: &[f64], radius: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let r = radius.min(i).min(n - 1 - i);
            let win = &values[i - r..=i + r];
            win.iter().sum::<f64>() / win.len() as f64
        })
        .collect()
}

/// Central differences (one-sided at the ends).
pub fn differentiate(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

/// Smoothed velocity series in fraction of full scale per second.
pub fn velocity_profile(times: &[f64], positions: &[f64]) -> Vec<f64> {
    differentiate(times, &moving_average(positions, 2))
}

/// Peak absolute cursor speed over the trial, percent of full scale per second.
pub fn max_velocity(traj: &Trajectory) -> f64 {
    100.0 * velocity_profile(&traj.times, &traj.positions).into_iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Coefficient of determination between `observed` and `reference`.
pub fn r_squared(observed: &[f64], reference: &[f64]) -> Option<f64> {
    if observed.len() != reference.len() || observed.is_empty() {
        return None;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean) * (o - mean)).sum();
    let ss_res: f64 = observed.iter().zip(reference).map(|(o, r)| (o - r) * (o - r)).sum();
    if ss_tot == 0.0 || observed.iter().all(|o| *o == observed[0]) {
        return (ss_res == 0.0).then_some(1.0);
    }
    Some(1.0 - ss_res / ss_tot)
}

/// Fit of the onset→entry segment to a minimum-jerk profile with the same
/// endpoints and duration.
pub fn r_squared_minjerk(traj: &Trajectory) -> Option<f64> {
    let onset = traj.event_time(TrialEventKind::MovementOnset)?;
    let entry = traj.event_time(TrialEventKind::BandEntry)?;
    if entry <= onset {
        return None;
    }
    let first = traj.times.iter().position(|&t| t >= onset)?;
    let last = traj.times.iter().rposition(|&t| t <= entry)?;
    if last < first + 2 {
        return None;
    }
    let times = &traj.times[first..=last];
    let observed = &traj.positions[first..=last];
    let t0 = times[0];
    let rel: Vec<f64> = times.iter().map(|t| t - t0).collect();
    let duration = rel[rel.len() - 1];
    let reference = min_jerk_reference(observed[0], observed[observed.len() - 1], duration, &rel);
    r_squared(observed, &reference)
}

/// All outcome measures for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial_index: usize,
    pub target_center: f64,
    pub succeeded: bool,
    pub reaction_time: Option<f64>,
    pub movement_time: Option<f64>,
    pub path_efficiency: Option<f64>,
    pub endpoint_error: Option<f64>,
    pub endpoint_stability: Option<f64>,
    pub max_velocity: f64,
    pub r_squared_minjerk: Option<f64>,
}

impl TrialMetrics {
    pub fn compute(record: &TrialRecord) -> Self {
        let base = Self {
            trial_index: record.index,
            target_center: record.target.center,
            succeeded: record.succeeded,
            reaction_time: None,
            movement_time: None,
            path_efficiency: None,
            endpoint_error: None,
            endpoint_stability: None,
            max_velocity: 0.0,
            r_squared_minjerk: None,
        };
        let Ok(traj) = Trajectory::from_record(record) else {
            return base;
        };
        Self {
            reaction_time: reaction_time(&traj),
            movement_time: movement_time(&traj),
            path_efficiency: path_efficiency(&traj),
            endpoint_error: endpoint_error(&traj),
            endpoint_stability: endpoint_stability(&traj),
            max_velocity: max_velocity(&traj),
            r_squared_minjerk: r_squared_minjerk(&traj),
            ..base
        }
    }
}
