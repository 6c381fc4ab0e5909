#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sonomyo::metrics::Trajectory;
use sonomyo::normalization::CursorSample;
use sonomyo::task::{Target, TrialEvent, TrialEventKind};

pub fn sample(t: f64, position: f64) -> CursorSample {
    CursorSample { position, s_norm: 1.0 - position, timestamp: t }
}

/// Pearson correlation by two plain passes over the pixels.
pub fn scalar_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in 0..a.len() {
        sa += a[i];
        sb += b[i];
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    num / (da * db).sqrt()
}

/// Analytic 3×3 Gaussian (σ = 0.5) weights, normalized.
pub fn analytic_kernel() -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let r2 = (dx as f64 - 1.0).powi(2) + (dy as f64 - 1.0).powi(2);
            *v = (-r2 / (2.0 * 0.25)).exp();
            total += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

/// Success or timeout from a scan over the held trajectory's in-band
/// intervals.
pub fn interval_oracle(target: Target, samples: &[CursorSample], dwell: f64, deadline: f64) -> (TrialEventKind, f64) {
    let (lo, hi) = target.band();
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let end = samples.get(i + 1).map_or(f64::INFINITY, |n| n.timestamp);
        if s.position < lo || s.position > hi {
            continue;
        }
        match intervals.last_mut() {
            Some(last) if last.1 == s.timestamp => last.1 = end,
            _ => intervals.push((s.timestamp, end)),
        }
    }
    intervals
        .into_iter()
        .map(|(a, b)| (a + dwell, b))
        .find(|&(done, end)| done <= end && done <= deadline)
        .map(|(done, _)| (TrialEventKind::Success, done))
        .unwrap_or((TrialEventKind::Timeout, deadline))
}

/// Random cursor walk with occasional jumps into the target band, on either a
/// 20 Hz grid or jittered timestamps.
pub fn scripted(rng: &mut ChaCha8Rng) -> (Target, Vec<CursorSample>) {
    let level = rng.random_range(0..=9);
    let target = if level == 0 { Target::reset(0.05) } else { Target::new(level as f64 / 10.0, 0.05).unwrap() };
    let mut t = 0.0;
    let mut x: f64 = rng.random_range(0.0..1.0);
    let step = rng.random_range(0.005..0.08);
    let grid = rng.random_bool(0.5);
    let mut out = Vec::new();
    let mut k = 0u32;
    while t < 12.0 {
        out.push(sample(t, x));
        k += 1;
        t = if grid { k as f64 / 20.0 } else { t + rng.random_range(0.01..0.3) };
        if rng.random_bool(0.15) {
            x = target.center + rng.random_range(-0.04..0.04);
        } else {
            x = (x + rng.random_range(-step..step)).clamp(0.0, 1.0);
        }
    }
    (target, out)
}

pub fn brute_u(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| {
            b.iter().map(move |y| {
                if x > y {
                    1.0
                } else if x == y {
                    0.5
                } else {
                    0.0
                }
            })
        })
        .sum()
}

pub fn ev(kind: TrialEventKind, timestamp: f64) -> TrialEvent {
    TrialEvent { kind, timestamp }
}

pub fn target(c: f64) -> Target {
    Target::new(c, 0.05).unwrap()
}

/// Positions sampled every 50 ms from t = 0, entering the band at `entry`.
pub fn path(positions: &[f64], center: f64, entry: usize) -> Trajectory {
    let samples: Vec<(f64, f64)> = positions.iter().enumerate().map(|(i, &p)| (i as f64 * 0.05, p)).collect();
    let events = vec![ev(TrialEventKind::Presented, 0.0), ev(TrialEventKind::BandEntry, entry as f64 * 0.05)];
    Trajectory::new(&samples, target(center), 0.0, 1.5, events).unwrap()
}

/// A trial that succeeded at `end` with `dwell` spread evenly over the window.
pub fn dwelling(center: f64, dwell: &[f64], end: f64) -> Trajectory {
    let n = dwell.len();
    let start = end - 1.5;
    let mut samples = vec![(0.0, 0.0)];
    samples.extend(dwell.iter().enumerate().map(|(i, &p)| (start + 1.5 * i as f64 / (n - 1).max(1) as f64, p)));
    let events = vec![
        ev(TrialEventKind::Presented, 0.0),
        ev(TrialEventKind::BandEntry, start),
        ev(TrialEventKind::Success, end),
    ];
    Trajectory::new(&samples, target(center), 0.0, 1.5, events).unwrap()
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
