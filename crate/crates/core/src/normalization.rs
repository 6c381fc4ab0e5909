//! Signal normalization, online bound adaptation and the cursor mapping.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("lower bound {lower} must be below upper bound {upper}")]
    Inverted { lower: f64, upper: f64 },
    #[error("invalid tracker parameter: {0}")]
    Parameter(&'static str),
}

/// Normalization extrema for the raw signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: f64,
    upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, BoundsError> {
        if !(lower < upper) {
            return Err(BoundsError::Inverted { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// Bounds spanning the raw signal observed at the two calibration extremes.
    pub fn from_extremes(a: f64, b: f64) -> Result<Self, BoundsError> {
        Self::new(a.min(b), a.max(b))
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self { lower: 0.0, upper: 1.0 }
    }
}

/// Maps a raw signal into `[0, 1]` against `bounds`, clamping out-of-range input.
pub fn normalize(s_raw: f64, bounds: &Bounds) -> f64 {
    ((s_raw - bounds.lower) / (bounds.upper - bounds.lower)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    /// Length of the history window, seconds.
    pub window_seconds: f64,
    /// Frames per second used to size the window.
    pub nominal_rate: f64,
    /// Fraction of the unused gap removed per frame when contracting.
    pub shrink_rate: f64,
    /// Contraction only starts once the window leaves this fraction of the
    /// range unused.
    pub margin: f64,
    /// Keep the calibration bounds for the whole session.
    pub frozen: bool,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { window_seconds: 10.0, nominal_rate: 20.0, shrink_rate: 0.01, margin: 0.05, frozen: false }
    }
}

impl TrackerParams {
    pub fn capacity(&self) -> usize {
        (self.window_seconds * self.nominal_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        if self.capacity() < 2 {
            return Err(BoundsError::Parameter("window must hold at least two samples"));
        }
        if !(self.shrink_rate > 0.0 && self.shrink_rate < 1.0) {
            return Err(BoundsError::Parameter("shrink_rate must lie in (0, 1)"));
        }
        if !(self.margin >= 0.0 && self.margin < 0.5) {
            return Err(BoundsError::Parameter("margin must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Online bound adaptation.
///
/// Bounds expand immediately when the signal leaves them and contract slowly
/// toward the window extrema when part of the range goes unused.
#[derive(Debug, Clone)]
pub struct BoundTracker {
    bounds: Bounds,
    window: VecDeque<f64>,
    capacity: usize,
    params: TrackerParams,
}

impl BoundTracker {
    pub fn new(initial: Bounds, params: TrackerParams) -> Result<Self, BoundsError> {
        params.validate()?;
        let capacity = params.capacity();
        Ok(Self { bounds: initial, window: VecDeque::with_capacity(capacity), capacity, params })
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Feeds one raw value and returns the updated bounds.
    pub fn update(&mut self, s_raw: f64) -> Bounds {
        if self.params.frozen || !s_raw.is_finite() {
            return self.bounds;
        }
        let Bounds { mut lower, mut upper } = self.bounds;

        if s_raw > upper {
            upper = s_raw;
        }
        if s_raw < lower {
            lower = s_raw;
        }

        {
            let (wmin, wmax) = self.window.iter().fold((s_raw, s_raw), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let range = upper - lower;
            let mut next_upper = upper;
            let mut next_lower = lower;
            if wmax < upper - self.params.margin * range {
                next_upper = upper - self.params.shrink_rate * (upper - wmax);
            }
            if wmin > lower + self.params.margin * range {
                next_lower = lower + self.params.shrink_rate * (wmin - lower);
            }
            if next_lower < next_upper {
                lower = next_lower;
                upper = next_upper;
            }
        }

        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(s_raw);

        if lower < upper {
            self.bounds = Bounds { lower, upper };
        }
        self.bounds
    }
}

/// How the normalized signal maps onto screen height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Direct,
    /// Full flexion (signal 0) puts the cursor at the top.
    #[default]
    Inverted,
}

/// Cursor position as a fraction of screen height (0 bottom, 1 top).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorSample {
    pub position: f64,
    pub s_norm: f64,
    pub timestamp: f64,
}

pub fn map_to_cursor(s_norm: f64, orientation: Orientation, timestamp: f64) -> CursorSample {
    let s_norm = s_norm.clamp(0.0, 1.0);
    let position = match orientation {
        Orientation::Direct => s_norm,
        Orientation::Inverted => 1.0 - s_norm,
    };
    CursorSample { position, s_norm, timestamp }
}
