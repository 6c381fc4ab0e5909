//! Calibration protocol: collect flexion and rest frames, then pick one
//! representative frame per phase as the correlation references.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{gaussian_smooth, pearson2d, CenteredImage, Frame, FrameError, ReferencePair};

/// Minimum number of frames a phase must contribute.
pub const MIN_PHASE_FRAMES: usize = 5;

/// References correlating at or above this are rejected.
pub const MAX_REFERENCE_CORRELATION: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("{phase:?} phase collected {count} frames, need at least {MIN_PHASE_FRAMES}")]
    InsufficientData { phase: CalibrationPhase, count: usize },
    #[error("references are indistinguishable (correlation {0:.6})")]
    IndistinguishableReferences(f64),
    #[error("cannot select a representative from an empty set")]
    Empty,
    #[error("invalid calibration plan: {0}")]
    Plan(&'static str),
    #[error("frame dimensions changed during calibration: {0:?} then {1:?}")]
    DimensionChange((usize, usize), (usize, usize)),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationPhase {
    Flex,
    Rest,
}

impl CalibrationPhase {
    pub fn prompt(self) -> &'static str {
        match self {
            CalibrationPhase::Flex => "Flex your wrist fully and hold",
            CalibrationPhase::Rest => "Relax your wrist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub flex_duration: f64,
    pub rest_duration: f64,
    /// Phase starts, seconds from the beginning of calibration.
    pub prompt_schedule: Vec<(CalibrationPhase, f64)>,
    /// Fraction trimmed from each end of a phase window before selection.
    #[serde(default = "default_guard")]
    pub guard_fraction: f64,
}

fn default_guard() -> f64 {
    0.10
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self::with_durations(30.0, 30.0)
    }
}

impl CalibrationPlan {
    /// Flexion first, rest immediately after.
    pub fn with_durations(flex: f64, rest: f64) -> Self {
        Self {
            flex_duration: flex,
            rest_duration: rest,
            prompt_schedule: vec![(CalibrationPhase::Flex, 0.0), (CalibrationPhase::Rest, flex)],
            guard_fraction: default_guard(),
        }
    }

    pub fn duration_of(&self, phase: CalibrationPhase) -> f64 {
        match phase {
            CalibrationPhase::Flex => self.flex_duration,
            CalibrationPhase::Rest => self.rest_duration,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.flex_duration > 0.0 && self.rest_duration > 0.0) {
            return Err(CalibrationError::Plan("phase durations must be positive"));
        }
        if !(0.0..0.5).contains(&self.guard_fraction) {
            return Err(CalibrationError::Plan("guard fraction must lie in [0, 0.5)"));
        }
        for phase in [CalibrationPhase::Flex, CalibrationPhase::Rest] {
            if self.prompt_schedule.iter().filter(|(p, _)| *p == phase).count() != 1 {
                return Err(CalibrationError::Plan("each phase must be scheduled exactly once"));
            }
        }
        let mut windows: Vec<(f64, f64)> =
            self.prompt_schedule.iter().map(|&(p, s)| (s, s + self.duration_of(p))).collect();
        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if windows.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(CalibrationError::Plan("phases overlap"));
        }
        Ok(())
    }

    /// End of the last phase.
    pub fn total_duration(&self) -> f64 {
        self.prompt_schedule.iter().map(|&(p, s)| s + self.duration_of(p)).fold(0.0, f64::max)
    }

    pub fn phase_window(&self, phase: CalibrationPhase) -> (f64, f64) {
        let start = self.prompt_schedule.iter().find(|(p, _)| *p == phase).map(|&(_, s)| s).unwrap_or(0.0);
        (start, start + self.duration_of(phase))
    }

    /// Phase whose window contains `t`.
    pub fn phase_at(&self, t: f64) -> Option<CalibrationPhase> {
        self.prompt_schedule.iter().map(|&(p, _)| p).find(|&p| {
            let (a, b) = self.phase_window(p);
            t >= a && t < b
        })
    }

    /// The part of a phase window that feeds reference selection.
    pub fn selection_window(&self, phase: CalibrationPhase) -> (f64, f64) {
        let (a, b) = self.phase_window(phase);
        let guard = self.guard_fraction * (b - a);
        (a + guard, b - guard)
    }

    pub fn selection_phase_at(&self, t: f64) -> Option<CalibrationPhase> {
        [CalibrationPhase::Flex, CalibrationPhase::Rest].into_iter().find(|&p| {
            let (a, b) = self.selection_window(p);
            t >= a && t < b
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingDatabase {
    pub refs: ReferencePair,
    pub flex_window_frames: usize,
    pub rest_window_frames: usize,
    /// Unix seconds.
    pub created_at: u64,
}

/// Running medoid search.
///
/// The sum of correlations of frame `i` against all others equals
/// `zᵢ · Σⱼ zⱼ − 1` where `zᵢ` is the centered, unit-norm smoothed frame, so
/// the medoid is found in two linear passes instead of all pairs.
#[derive(Debug, Default, Clone)]
pub struct MedoidAccumulator {
    frames: Vec<Frame>,
    sum: Vec<f64>,
}

fn unit_vector(frame: &Frame) -> Result<Vec<f64>, FrameError> {
    let smoothed = gaussian_smooth(frame)?;
    let centered = CenteredImage::new(&smoothed.image);
    let mean = smoothed.image.mean();
    let norm = centered.sum_sq().sqrt();
    Ok(smoothed.image.data().iter().map(|v| if norm > 0.0 { (v - mean) / norm } else { 0.0 }).collect())
}

impl MedoidAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, frame: Frame) -> Result<(), CalibrationError> {
        if let Some(first) = self.frames.first() {
            if first.dims() != frame.dims() {
                return Err(CalibrationError::DimensionChange(first.dims(), frame.dims()));
            }
        }
        let z = unit_vector(&frame)?;
        if self.sum.is_empty() {
            self.sum = z;
        } else {
            for (s, v) in self.sum.iter_mut().zip(z) {
                *s += v;
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Index of the medoid; the earliest frame wins ties.
    pub fn medoid_index(&self) -> Result<usize, CalibrationError> {
        if self.frames.is_empty() {
            return Err(CalibrationError::Empty);
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, frame) in self.frames.iter().enumerate() {
            let z = unit_vector(frame)?;
            let score: f64 = z.iter().zip(&self.sum).map(|(a, b)| a * b).sum();
            if score > best.1 {
                best = (i, score);
            }
        }
        Ok(best.0)
    }

    pub fn into_medoid(mut self) -> Result<Frame, CalibrationError> {
        let i = self.medoid_index()?;
        Ok(self.frames.swap_remove(i))
    }
}

/// The frame with the largest summed correlation against the others.
pub fn select_representative(frames: &[Frame]) -> Result<Frame, CalibrationError> {
    let mut acc = MedoidAccumulator::new();
    for f in frames {
        acc.push(f.clone())?;
    }
    acc.into_medoid()
}

/// Incremental calibration over a frame stream whose timestamps are relative
/// to the start of calibration.
#[derive(Debug, Clone)]
pub struct Calibrator {
    plan: CalibrationPlan,
    flex: MedoidAccumulator,
    rest: MedoidAccumulator,
}

impl Calibrator {
    pub fn new(plan: CalibrationPlan) -> Result<Self, CalibrationError> {
        plan.validate()?;
        Ok(Self { plan, flex: MedoidAccumulator::new(), rest: MedoidAccumulator::new() })
    }

    pub fn plan(&self) -> &CalibrationPlan {
        &self.plan
    }

    pub fn push(&mut self, frame: Frame) -> Result<(), CalibrationError> {
        match self.plan.selection_phase_at(frame.timestamp()) {
            Some(CalibrationPhase::Flex) => self.flex.push(frame),
            Some(CalibrationPhase::Rest) => self.rest.push(frame),
            None => Ok(()),
        }
    }

    pub fn finish(self, created_at: u64) -> Result<TrainingDatabase, CalibrationError> {
        for (phase, acc) in [(CalibrationPhase::Flex, &self.flex), (CalibrationPhase::Rest, &self.rest)] {
            if acc.len() < MIN_PHASE_FRAMES {
                return Err(CalibrationError::InsufficientData { phase, count: acc.len() });
            }
        }
        let (flex_window_frames, rest_window_frames) = (self.flex.len(), self.rest.len());
        let motion = self.flex.into_medoid()?;
        let rest = self.rest.into_medoid()?;
        if rest.dims() != motion.dims() {
            return Err(CalibrationError::DimensionChange(rest.dims(), motion.dims()));
        }
        let c = pearson2d(&gaussian_smooth(&rest)?.image, &gaussian_smooth(&motion)?.image)?;
        if c >= MAX_REFERENCE_CORRELATION {
            return Err(CalibrationError::IndistinguishableReferences(c));
        }
        Ok(TrainingDatabase {
            refs: ReferencePair::new(rest, motion)?,
            flex_window_frames,
            rest_window_frames,
            created_at,
        })
    }
}

/// Runs calibration over `source`, stamping the database with the wall clock.
pub fn run_calibration<I>(source: I, plan: &CalibrationPlan) -> Result<TrainingDatabase, CalibrationError>
where
    I: IntoIterator<Item = Frame>,
{
    let mut cal = Calibrator::new(plan.clone())?;
    for frame in source {
        if frame.timestamp() >= plan.total_duration() {
            break;
        }
        cal.push(frame)?;
    }
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    cal.finish(now)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u8, t: f64) -> Frame {
        let px = (0..64u32).map(|i| ((i.wrapping_mul(37 + seed as u32) + seed as u32 * 11) % 251) as u8).collect();
        Frame::new(8, 8, px, t).unwrap()
    }

    #[test]
    fn plan_windows() {
        let plan = CalibrationPlan::default();
        plan.validate().unwrap();
        assert_eq!(plan.total_duration(), 60.0);
        assert_eq!(plan.selection_window(CalibrationPhase::Flex), (3.0, 27.0));
        assert_eq!(plan.selection_window(CalibrationPhase::Rest), (33.0, 57.0));
        assert_eq!(plan.phase_at(29.9), Some(CalibrationPhase::Flex));
        assert_eq!(plan.selection_phase_at(29.9), None);
        let mut bad = plan.clone();
        bad.prompt_schedule[1].1 = 10.0;
        assert!(bad.validate().is_err());
        assert!(CalibrationPlan::with_durations(0.0, 1.0).validate().is_err());
    }

    #[test]
    fn singleton_and_empty() {
        let f = textured(1, 0.0);
        assert_eq!(select_representative(std::slice::from_ref(&f)).unwrap(), f);
        assert_eq!(select_representative(&[]), Err(CalibrationError::Empty));
    }

    #[test]
    fn identical_pair_beats_outlier() {
        let a = textured(1, 0.0);
        let b = textured(1, 1.0);
        let outlier = textured(7, 2.0);
        let picked = select_representative(&[outlier, a.clone(), b]).unwrap();
        assert_eq!(picked, a);
    }

    #[test]
    fn short_rest_phase_is_rejected() {
        let plan = CalibrationPlan::with_durations(1.0, 1.0);
        let mut frames: Vec<Frame> = (0..20).map(|i| textured(1, i as f64 * 0.05)).collect();
        frames.extend((0..3).map(|i| textured(9, 1.4 + i as f64 * 0.05)));
        let err = run_calibration(frames, &plan).unwrap_err();
        assert_eq!(err, CalibrationError::InsufficientData { phase: CalibrationPhase::Rest, count: 3 });
    }

    #[test]
    fn identical_phases_are_rejected() {
        let plan = CalibrationPlan::with_durations(1.0, 1.0);
        let frames: Vec<Frame> = (0..40).map(|i| textured(1, i as f64 * 0.05)).collect();
        assert!(matches!(run_calibration(frames, &plan), Err(CalibrationError::IndistinguishableReferences(_))));
    }
}
