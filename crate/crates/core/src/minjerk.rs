//! Minimum-jerk point-to-point profile.
//!
//! `P(t) = P0 + (P0 − P1)(15τ⁴ − 6τ⁵ − 10τ³)` with `τ = t / T`, the
//! closed-form minimizer of the integrated squared jerk with zero velocity and
//! acceleration at both ends.

/// Normalized shape `10τ³ − 15τ⁴ + 6τ⁵`, clamped outside `[0, 1]`.
pub fn shape(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    if tau >= 1.0 {
        return 1.0;
    }
    -(15.0 * tau.powi(4) - 6.0 * tau.powi(5) - 10.0 * tau.powi(3))
}

/// Derivative of [`shape`] with respect to τ: `30τ² − 60τ³ + 30τ⁴`.
pub fn shape_rate(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    30.0 * tau * tau * (1.0 - tau) * (1.0 - tau)
}

/// Position at time `t` (relative to movement start) of a movement from `p0`
/// to `p1` lasting `duration`.
pub fn position(p0: f64, p1: f64, duration: f64, t: f64) -> f64 {
    let tau = (t / duration).clamp(0.0, 1.0);
    p0 + (p0 - p1) * (15.0 * tau.powi(4) - 6.0 * tau.powi(5) - 10.0 * tau.powi(3))
}

/// Velocity at time `t` of the same movement.
pub fn velocity(p0: f64, p1: f64, duration: f64, t: f64) -> f64 {
    (p1 - p0) * shape_rate(t / duration) / duration
}

/// Peak speed of a minimum-jerk movement: `15/8 · |A| / T`.
pub fn peak_speed(amplitude: f64, duration: f64) -> f64 {
    1.875 * amplitude.abs() / duration
}

/// Reference positions at each of `times` (seconds since movement start).
pub fn min_jerk_reference(p0: f64, p1: f64, duration: f64, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| position(p0, p1, duration, t)).collect()
}
