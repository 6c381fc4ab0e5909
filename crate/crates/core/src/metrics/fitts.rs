//! Fitts' law regression of movement time on index of difficulty.

use serde::{Deserialize, Serialize};

use super::{movement_time, MetricsError, Trajectory};
use crate::task::TrialRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdForm {
    /// `log2(D / W)`
    #[default]
    Fitts,
    /// `log2(D / W + 1)`
    Shannon,
}

impl IdForm {
    pub fn index_of_difficulty(self, distance: f64, width: f64) -> f64 {
        match self {
            IdForm::Fitts => (distance / width).log2(),
            IdForm::Shannon => (distance / width + 1.0).log2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittsFit {
    /// Seconds per bit.
    pub slope: f64,
    pub intercept: f64,
    /// Bits per second; only defined for a positive slope.
    pub throughput: Option<f64>,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// (ID, MT) pairs for successful task trials.
///
/// Distance is measured from the trial's first cursor sample to the target
/// center; width is the full band width.
pub fn fitts_points(trials: &[TrialRecord], form: IdForm) -> Vec<(f64, f64)> {
    trials
        .iter()
        .filter(|t| t.succeeded && !t.target.is_reset())
        .filter_map(|t| {
            let traj = Trajectory::from_record(t).ok()?;
            let mt = movement_time(&traj)?;
            let distance = (t.target.center - traj.positions[0]).abs();
            let width = 2.0 * t.target.half_width;
            (distance > 0.0).then(|| (form.index_of_difficulty(distance, width), mt))
        })
        .collect()
}

/// Ordinary least squares `MT = intercept + slope · ID`.
pub fn fitts_fit(points: &[(f64, f64)]) -> Result<FittsFit, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::DegenerateRegression("need at least two points"));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateRegression("all IDs are equal"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(FittsFit {
        slope,
        intercept,
        throughput: (slope > 0.0).then(|| 1.0 / slope),
        r_squared,
        points: points.to_vec(),
    })
}
