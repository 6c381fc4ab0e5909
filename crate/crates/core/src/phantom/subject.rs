//! Virtual subjects that close the loop in place of a human participant.
//!
//! Movements are built from minimum-jerk segments. Able-bodied subjects split
//! each reach into a primary movement and a smaller overlapping corrective
//! submovement; the impaired profile reacts later, moves faster with no
//! deceleration-phase correction, and carries more tremor. Both watch the
//! cursor and re-plan when it settles outside their tolerance.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationPhase, CalibrationPlan};
use crate::minjerk;
use crate::normalization::CursorSample;
use crate::task::{Target, ONSET_THRESHOLD};

/// Reference distance for the duration model, in full-scale fractions.
const DURATION_UNIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    AbleBodied,
    Sci,
    /// Follows the calibration prompts, then produces no activation during
    /// the task.
    Inert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualSubjectParams {
    pub profile: Profile,
    /// Presentation to detectable movement, seconds.
    pub reaction_mean: f64,
    pub reaction_sd: f64,
    pub movement_time_base: f64,
    pub movement_time_per_bit: f64,
    /// RMS of activation tremor at full activation.
    pub tremor_sigma: f64,
    /// Share of each reach carried by the corrective submovement.
    pub submovement_gain: f64,
    /// Speed-up applied to planned movements by time compression.
    pub peak_velocity_scale: f64,
    /// Cursor error, as a fraction of the band half-width, tolerated before
    /// re-planning.
    pub correction_tolerance: f64,
    /// Time an error must persist before the subject reacts to it, seconds.
    pub perception_delay: f64,
    /// Rate at which the subject's internal cursor model follows observations.
    pub learning_rate: f64,
}

impl VirtualSubjectParams {
    pub fn able_bodied() -> Self {
        Self {
            profile: Profile::AbleBodied,
            reaction_mean: 0.84,
            reaction_sd: 0.45,
            movement_time_base: 1.0,
            movement_time_per_bit: 0.45,
            tremor_sigma: 0.008,
            submovement_gain: 0.15,
            peak_velocity_scale: 1.0,
            correction_tolerance: 0.5,
            perception_delay: 0.25,
            learning_rate: 0.5,
        }
    }

    pub fn sci() -> Self {
        Self {
            profile: Profile::Sci,
            reaction_mean: 1.16,
            reaction_sd: 0.64,
            movement_time_base: 1.0,
            movement_time_per_bit: 0.45,
            tremor_sigma: 0.02,
            submovement_gain: 0.0,
            peak_velocity_scale: 1.7,
            correction_tolerance: 1.0,
            perception_delay: 0.35,
            learning_rate: 0.3,
        }
    }

    pub fn inert() -> Self {
        Self { profile: Profile::Inert, tremor_sigma: 0.0, ..Self::able_bodied() }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::AbleBodied => Self::able_bodied(),
            Profile::Sci => Self::sci(),
            Profile::Inert => Self::inert(),
        }
    }

    /// Deterministic variant: no tremor, no submovement, fixed reaction.
    pub fn noiseless(self) -> Self {
        Self { reaction_sd: 0.0, tremor_sigma: 0.0, submovement_gain: 0.0, ..self }
    }

    /// Fitts-style planned duration for a movement of `distance`.
    pub fn movement_duration(&self, distance: f64) -> f64 {
        let bits = (distance.abs() / DURATION_UNIT).log2();
        (self.movement_time_base + self.movement_time_per_bit * bits).max(self.movement_time_base)
    }

    fn sample_reaction(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.reaction_sd <= 0.0 {
            return self.reaction_mean;
        }
        // Log-normal with the configured mean and spread: positive and right-skewed.
        let sigma2 = (1.0 + (self.reaction_sd / self.reaction_mean).powi(2)).ln();
        let mu = self.reaction_mean.ln() - sigma2 / 2.0;
        LogNormal::new(mu, sigma2.sqrt()).map(|d| d.sample(rng)).unwrap_or(self.reaction_mean)
    }
}

impl Default for VirtualSubjectParams {
    fn default() -> Self {
        Self::able_bodied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    start: f64,
    duration: f64,
    delta: f64,
}

/// Band-limited tremor: a few sinusoids with random frequency and phase.
#[derive(Debug, Clone, PartialEq)]
struct Tremor {
    components: Vec<(f64, f64, f64)>,
}

impl Tremor {
    fn new(rng: &mut ChaCha8Rng, sigma: f64) -> Self {
        const COMPONENTS: usize = 4;
        let amp = sigma * (2.0 / COMPONENTS as f64).sqrt();
        let components = (0..COMPONENTS)
            .map(|_| (amp, rng.random_range(1.0..6.0), rng.random_range(0.0..TAU)))
            .filter(|c| c.0 > 0.0)
            .collect();
        Self { components }
    }

    fn at(&self, t: f64) -> f64 {
        self.components.iter().map(|&(a, f, p)| a * (TAU * f * t + p).sin()).sum()
    }
}

/// Tremor grows with the activation level.
fn tremor_envelope(nominal: f64) -> f64 {
    0.25 + 0.75 * nominal.clamp(0.0, 1.0)
}

/// Planned activation over time, relative to target presentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrajectory {
    from: f64,
    to: f64,
    reaction: f64,
    movement_start: f64,
    duration: f64,
    segments: Vec<Segment>,
    tremor: Tremor,
}

impl ActivationTrajectory {
    pub fn from(&self) -> f64 {
        self.from
    }

    pub fn to(&self) -> f64 {
        self.to
    }

    /// Sampled presentation-to-onset time.
    pub fn reaction(&self) -> f64 {
        self.reaction
    }

    pub fn movement_start(&self) -> f64 {
        self.movement_start
    }

    /// Duration of the movement after any velocity scaling.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn end(&self) -> f64 {
        self.segments.iter().map(|s| s.start + s.duration).fold(self.movement_start, f64::max)
    }

    /// Planned activation without tremor.
    pub fn nominal_at(&self, t: f64) -> f64 {
        self.from + self.segments.iter().map(|s| s.delta * minjerk::shape((t - s.start) / s.duration)).sum::<f64>()
    }

    /// Planned activation with tremor, clamped to `[0, 1]`.
    pub fn activation_at(&self, t: f64) -> f64 {
        let nominal = self.nominal_at(t);
        (nominal + tremor_envelope(nominal) * self.tremor.at(t)).clamp(0.0, 1.0)
    }

    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.activation_at(t)).collect()
    }
}

/// τ at which the minimum-jerk shape reaches `q`.
fn inverse_shape(q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if minjerk::shape(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Builds the segments of one reach starting at `start`.
fn reach_segments(start: f64, duration: f64, delta: f64, submovement_gain: f64) -> Vec<Segment> {
    let g = submovement_gain.clamp(0.0, 0.9);
    if g == 0.0 {
        return vec![Segment { start, duration, delta }];
    }
    vec![
        Segment { start, duration, delta: (1.0 - g) * delta },
        Segment { start: start + 0.55 * duration, duration: 0.45 * duration, delta: g * delta },
    ]
}

/// Plans a reach from activation `from` to `to`.
///
/// Times are relative to target presentation. The movement is scheduled so the
/// onset threshold is crossed at the sampled reaction time.
pub fn plan_movement(from: f64, to: f64, params: &VirtualSubjectParams, seed: u64) -> ActivationTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reaction = params.sample_reaction(&mut rng);
    let delta = to - from;
    let duration = params.movement_duration(delta) / params.peak_velocity_scale;
    let lead = if delta.abs() > 0.0 { inverse_shape(ONSET_THRESHOLD / delta.abs()) * duration } else { 0.0 };
    let movement_start = (reaction - lead).max(0.0);
    let tremor = Tremor::new(&mut rng, params.tremor_sigma);
    ActivationTrajectory {
        from,
        to,
        reaction,
        movement_start,
        duration,
        segments: reach_segments(movement_start, duration, delta, params.submovement_gain),
        tremor,
    }
}

#[derive(Debug, Clone)]
struct ActiveMovement {
    origin: f64,
    plan: ActivationTrajectory,
}

fn single_segment(from: f64, to: f64, reaction: f64, lead_fraction: f64, duration: f64) -> ActivationTrajectory {
    let movement_start = (reaction - inverse_shape(lead_fraction) * duration).max(0.0);
    ActivationTrajectory {
        from,
        to,
        reaction,
        movement_start,
        duration,
        segments: vec![Segment { start: movement_start, duration, delta: to - from }],
        tremor: Tremor { components: Vec::new() },
    }
}

const MODEL_KNOTS: usize = 21;

/// Piecewise-linear belief of cursor position as a function of activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    knots: [f64; MODEL_KNOTS],
}

impl Default for ForwardModel {
    fn default() -> Self {
        Self { knots: std::array::from_fn(|i| i as f64 / (MODEL_KNOTS - 1) as f64) }
    }
}

impl ForwardModel {
    fn locate(a: f64) -> (usize, f64) {
        let x = a.clamp(0.0, 1.0) * (MODEL_KNOTS - 1) as f64;
        let i = (x.floor() as usize).min(MODEL_KNOTS - 2);
        (i, x - i as f64)
    }

    pub fn predict(&self, a: f64) -> f64 {
        let (i, u) = Self::locate(a);
        self.knots[i] + u * (self.knots[i + 1] - self.knots[i])
    }

    /// Smallest activation predicted to reach `cursor`.
    pub fn inverse(&self, cursor: f64) -> f64 {
        let mut best = 0.0;
        let mut prev = self.knots[0];
        for i in 0..MODEL_KNOTS - 1 {
            let next = self.knots[i + 1].max(prev);
            if cursor <= prev {
                break;
            }
            let a0 = i as f64 / (MODEL_KNOTS - 1) as f64;
            if cursor <= next {
                let u = if next > prev { (cursor - prev) / (next - prev) } else { 0.0 };
                return a0 + u / (MODEL_KNOTS - 1) as f64;
            }
            best = a0 + 1.0 / (MODEL_KNOTS - 1) as f64;
            prev = next;
        }
        best
    }

    /// Moves the belief toward an observed (activation, cursor) pair. A pinned
    /// cursor only says the true position is at least that far out.
    pub fn learn(&mut self, a: f64, cursor: f64, rate: f64) {
        let predicted = self.predict(a);
        let error = cursor - predicted;
        if (cursor >= 0.995 && error > 0.0) || (cursor <= 0.005 && error < 0.0) || (0.005..0.995).contains(&cursor) {
            let (i, u) = Self::locate(a);
            self.knots[i] += rate * (1.0 - u) * error;
            self.knots[i + 1] += rate * u * error;
            if predicted > 0.05 {
                let scale = 1.0 + 0.2 * rate * error / predicted;
                self.knots.iter_mut().for_each(|k| *k *= scale);
            }
        }
    }
}

/// Closed-loop controller standing in for a participant.
///
/// Reaches are planned by inverting a forward model of the cursor that the
/// subject keeps refining from everything it sees; once a reach has settled, errors
/// larger than the tolerance trigger a corrective minimum-jerk submovement.
#[derive(Debug, Clone)]
pub struct VirtualSubject {
    params: VirtualSubjectParams,
    rng: ChaCha8Rng,
    tremor: Tremor,
    model: ForwardModel,
    hold: f64,
    cursor: f64,
    movement: Option<ActiveMovement>,
    target: Option<Target>,
    off_since: Option<f64>,
    settled_since: f64,
}

impl VirtualSubject {
    pub fn new(params: VirtualSubjectParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tremor = Tremor::new(&mut rng, params.tremor_sigma);
        Self {
            params,
            rng,
            tremor,
            model: ForwardModel::default(),
            hold: 0.0,
            cursor: 0.0,
            movement: None,
            target: None,
            off_since: None,
            settled_since: 0.0,
        }
    }

    pub fn params(&self) -> &VirtualSubjectParams {
        &self.params
    }

    /// The subject's current belief of where the cursor sits at each activation.
    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    fn with_tremor(&self, nominal: f64, t: f64) -> f64 {
        (nominal + tremor_envelope(nominal) * self.tremor.at(t)).clamp(0.0, 1.0)
    }

    /// Activation while following the calibration prompts.
    pub fn calibration_activation(&self, t: f64, plan: &CalibrationPlan) -> f64 {
        const RAMP: f64 = 1.0;
        let (flex_start, flex_end) = plan.phase_window(CalibrationPhase::Flex);
        let nominal = if t >= flex_start && t < flex_end {
            minjerk::shape((t - flex_start) / RAMP)
        } else if t >= flex_end && t < flex_end + RAMP {
            1.0 - minjerk::shape((t - flex_end) / RAMP)
        } else {
            0.0
        };
        self.with_tremor(nominal, t)
    }

    fn nominal(&self, t: f64) -> f64 {
        match &self.movement {
            Some(m) => m.plan.nominal_at(t - m.origin),
            None => self.hold,
        }
    }

    fn goal_for(&self, target: &Target, from_activation: f64, from_cursor: f64) -> f64 {
        if target.is_reset() {
            return 0.0;
        }
        let aim = self.model.predict(from_activation) + target.center - from_cursor;
        self.model.inverse(aim)
    }

    /// Reacts to a newly presented target.
    pub fn present(&mut self, target: Target, t: f64) {
        self.target = Some(target);
        self.off_since = None;
        if self.params.profile == Profile::Inert {
            return;
        }
        let from = self.nominal(t);
        let goal = self.goal_for(&target, from, self.cursor);
        let travel = if target.is_reset() { self.cursor } else { (target.center - self.cursor).abs() };
        let reaction = self.params.sample_reaction(&mut self.rng);
        let duration = self.params.movement_duration(travel) / self.params.peak_velocity_scale;
        let delta = goal - from;
        let rising = delta > 0.0;
        let primary = (1.0 - self.params.submovement_gain.clamp(0.0, 0.9)) * delta.abs();
        let sign = if rising { 1.0 } else { -1.0 };
        let onset = (self.model.inverse(self.model.predict(from) + sign * ONSET_THRESHOLD) - from).abs();
        let lead = if travel > ONSET_THRESHOLD && primary > 0.0 { onset / primary } else { 0.0 };
        let onset_phase = inverse_shape(lead);
        let duration = if onset_phase * duration > reaction { (reaction / onset_phase).max(0.3) } else { duration };
        let mut plan = single_segment(from, goal, reaction, lead, duration);
        plan.segments = reach_segments(plan.movement_start, duration, delta, self.params.submovement_gain);
        self.movement = Some(ActiveMovement { origin: t, plan });
    }

    /// Activation commanded at time `t`.
    pub fn activation(&mut self, t: f64) -> f64 {
        if self.params.profile == Profile::Inert {
            return 0.0;
        }
        if let Some(m) = &self.movement {
            if t - m.origin >= m.plan.end() {
                self.hold = m.plan.to();
                self.movement = None;
                self.settled_since = t;
            }
        }
        let nominal = self.nominal(t);
        self.with_tremor(nominal, t)
    }

    /// Visual feedback: the subject sees where the cursor is.
    pub fn observe(&mut self, cursor: &CursorSample) {
        self.cursor = cursor.position;
        if self.params.profile == Profile::Inert {
            return;
        }
        let intended = self.nominal(cursor.timestamp);
        self.model.learn(intended, cursor.position, 0.1 * self.params.learning_rate);
        if self.movement.is_some() {
            return;
        }
        let Some(target) = self.target else { return };
        let t = cursor.timestamp;
        let settled = t - self.settled_since;
        if settled < self.params.perception_delay {
            return;
        }
        let outside = if target.is_reset() {
            cursor.position > target.band().1
        } else {
            (target.center - cursor.position).abs() > self.params.correction_tolerance * target.half_width
        };
        if !outside {
            self.off_since = None;
            return;
        }
        let since = *self.off_since.get_or_insert(t);
        if t - since < self.params.perception_delay {
            return;
        }
        let goal = self.goal_for(&target, self.hold, cursor.position);
        self.off_since = None;
        if (goal - self.hold).abs() < 1e-4 {
            return;
        }
        let duration = 0.4 * self.params.movement_time_base / self.params.peak_velocity_scale;
        let plan = single_segment(self.hold, goal, 0.0, 0.0, duration);
        self.movement = Some(ActiveMovement { origin: t, plan });
    }
}
