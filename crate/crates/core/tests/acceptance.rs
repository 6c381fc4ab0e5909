//! One PASS/FAIL line per acceptance criterion.

mod common;

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use common::{analytic_kernel, brute_u, dwelling, interval_oracle, path, round2, scalar_pearson, scripted};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonomyo::frame::{gaussian_kernel, gaussian_smooth, pearson2d, signal_from_correlations, Frame, ReferencePair};
use sonomyo::metrics::fitts::{fitts_fit, IdForm};
use sonomyo::metrics::report::{analyze, write_plot_csv, write_trial_csv, SessionTrials};
use sonomyo::metrics::stats::{friedman_test, mann_whitney_u, Alternative};
use sonomyo::metrics::Trajectory;
use sonomyo::metrics::{endpoint_error, endpoint_stability, max_velocity, path_efficiency, success_rate, TrialMetrics};
use sonomyo::minjerk::{position, shape_rate, velocity};
use sonomyo::normalization::{BoundTracker, Bounds, Orientation, TrackerParams};
use sonomyo::phantom::{Phantom, PhantomParams, Profile};
use sonomyo::session::log::log_bytes;
use sonomyo::session::{Pipeline, SessionConfig, SessionLog};
use sonomyo::simulation::run_cohort;
use sonomyo::task::{run_trial, PlanConfig, Target, TrialRecord};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn signal_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = rng.random_range(-0.99..0.999);
        let other = rng.random_range(-0.99..0.999);
        worst = worst.max((signal_from_correlations(c, 1.0).unwrap() - 0.0).abs());
        worst = worst.max((signal_from_correlations(1.0, other).unwrap() - 1.0).abs());
        worst = worst.max((signal_from_correlations(c, c).unwrap() - 0.5).abs());
    }
    let w = 16;
    let rest = Frame::new(w, w, (0..w * w).map(|_| rng.random()).collect(), 0.0).unwrap();
    let motion = Frame::new(w, w, (0..w * w).map(|_| rng.random()).collect(), 0.0).unwrap();
    let refs = ReferencePair::new(rest.clone(), motion.clone()).unwrap();
    let p = sonomyo::frame::SignalProcessor::new(&refs);
    worst = worst.max(p.process(&motion).unwrap().s_raw.abs());
    worst = worst.max((p.process(&rest).unwrap().s_raw - 1.0).abs());
    ensure(worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn correlation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(3..32), rng.random_range(3..32));
        let a: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
        let b: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
        let got = pearson2d(
            &sonomyo::frame::Image::new(w, h, a.clone()).unwrap(),
            &sonomyo::frame::Image::new(w, h, b.clone()).unwrap(),
        )
        .unwrap();
        worst = worst.max((got - scalar_pearson(&a, &b)).abs());
    }
    ensure(worst < 1e-10, format!("50 images, max |diff| {worst:.1e}"))
}

fn filter_oracle() -> Outcome {
    let (w, h) = (9, 8);
    let mut px = vec![0u8; w * h];
    px[4 * w + 4] = 255;
    let out = gaussian_smooth(&Frame::new(w, h, px, 0.0).unwrap()).unwrap().image;
    let k = analytic_kernel();
    let mut worst: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as i64 - 4, y as i64 - 4);
            let expected =
                if dx.abs() <= 1 && dy.abs() <= 1 { 255.0 * k[(dy + 1) as usize][(dx + 1) as usize] } else { 0.0 };
            worst = worst.max((out.get(x, y) - expected).abs() / 255.0);
        }
    }
    let used = gaussian_kernel();
    for (a, b) in used.iter().flatten().zip(k.iter().flatten()) {
        worst = worst.max((a - b).abs());
    }
    let sum: f64 = used.iter().flatten().sum();
    ensure(worst < 1e-10 && (sum - 1.0).abs() < 1e-10, format!("max |diff| {worst:.1e}, kernel sum {sum}"))
}

fn min_jerk_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut worst_peak: f64 = 0.0;
    for _ in 0..200 {
        let (p0, p1) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let d = rng.random_range(0.3..4.0);
        worst = worst.max((position(p0, p1, d, 0.0) - p0).abs());
        worst = worst.max((position(p0, p1, d, d) - p1).abs());
        worst = worst.max((position(p0, p1, d, d / 2.0) - (p0 + p1) / 2.0).abs());
        worst = worst.max(velocity(p0, p1, d, 0.0).abs()).max(velocity(p0, p1, d, d).abs());
        worst = worst.max(shape_rate(0.0).abs() + shape_rate(1.0).abs());
        let a = (p1 - p0).abs();
        if a > 0.01 {
            // Numeric peak of the sampled position's derivative.
            let dt = d / 20_000.0;
            let peak = (0..20_000)
                .map(|i| (position(p0, p1, d, (i + 1) as f64 * dt) - position(p0, p1, d, i as f64 * dt)).abs() / dt)
                .fold(0.0, f64::max);
            worst_peak = worst_peak.max((peak - 1.875 * a / d).abs() / (1.875 * a / d));
        }
    }
    ensure(
        worst <= 1e-12 && worst_peak < 0.01,
        format!("identity error {worst:.1e}, peak relative error {:.2e}", worst_peak),
    )
}

fn task_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut successes = 0;
    for _ in 0..1000 {
        let (target, samples) = scripted(&mut rng);
        let mut it = samples.iter().copied();
        let (record, _) = run_trial(&mut it, 0, target, 0.0, &PlanConfig::default()).map_err(|e| e.to_string())?;
        let e = record.terminal_event().unwrap();
        if (e.kind, e.timestamp) != interval_oracle(target, &samples, 1.5, 10.0) {
            mismatches += 1;
        }
        successes += record.succeeded as usize;
    }
    ensure(mismatches == 0, format!("1000 trajectories ({successes} successes), {mismatches} mismatches"))
}

fn metric_formulas() -> Outcome {
    let rec = |c: f64, ok: bool| TrialRecord {
        index: 0,
        target: Target::new(c, 0.05).unwrap(),
        presented_at: 0.0,
        dwell_required: 1.5,
        samples: vec![],
        events: vec![],
        succeeded: ok,
        aborted: false,
    };
    let mixed: Vec<_> = (1..=9).map(|i| rec(i as f64 / 10.0, i <= 6)).collect();
    let all: Vec<_> = (1..=9).map(|i| rec(i as f64 / 10.0, true)).collect();
    let none: Vec<_> = (1..=9).map(|i| rec(i as f64 / 10.0, false)).collect();
    let ramp: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
    let dwell = dwelling(0.5, &[0.52, 0.51, 0.53], 5.0);
    let checks = [
        ("success 6/9", round2(success_rate(&mixed).unwrap()), 66.67),
        ("success 9/9", success_rate(&all).unwrap(), 100.0),
        ("success 0/9", success_rate(&none).unwrap(), 0.0),
        ("eta ramp", round2(path_efficiency(&path(&ramp, 0.5, 9)).unwrap()), 111.11),
        ("eta overshoot", round2(path_efficiency(&path(&[0.0, 0.3, 0.6, 0.45], 0.5, 3)).unwrap()), 66.67),
        ("eta straight", path_efficiency(&path(&[0.0, 0.5], 0.5, 1)).unwrap(), 100.0),
        ("endpoint error", round2(endpoint_error(&dwell).unwrap()), -2.0),
        ("endpoint error at center", round2(endpoint_error(&dwelling(0.5, &[0.5; 4], 5.0)).unwrap()), 0.0),
        ("stability", round2(endpoint_stability(&dwell).unwrap()), 0.82),
        ("stability pair", round2(endpoint_stability(&dwelling(0.4, &[0.37, 0.43], 4.0)).unwrap()), 3.0),
    ];
    let bad: Vec<String> =
        checks.iter().filter(|c| c.1 != c.2).map(|c| format!("{} = {} (expected {})", c.0, c.1, c.2)).collect();
    let s: Vec<(f64, f64)> = (0..60).map(|k| (k as f64 * 0.05, 0.2 * k as f64 * 0.05)).collect();
    let v = max_velocity(&Trajectory::new(&s, Target::new(0.5, 0.05).unwrap(), 0.0, 1.5, vec![]).unwrap());
    let velocity_ok = (v - 20.0).abs() < 1e-9;
    ensure(
        bad.is_empty() && velocity_ok,
        if bad.is_empty() { format!("{} worked examples", checks.len() + 1) } else { bad.join("; ") },
    )
}

fn stats_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cases = 0;
    for n1 in 1..=8 {
        for n2 in 1..=8 {
            for _ in 0..25 {
                let a: Vec<f64> = (0..n1).map(|_| rng.random_range(0..6) as f64).collect();
                let b: Vec<f64> = (0..n2).map(|_| rng.random_range(0..6) as f64).collect();
                let u = mann_whitney_u(&a, &b, Alternative::TwoSided).map_err(|e| e.to_string())?.u;
                if u != brute_u(&a, &b) {
                    return Err(format!("U mismatch on {a:?} vs {b:?}"));
                }
                cases += 1;
            }
        }
    }
    let chi2 = friedman_test(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).map_err(|e| e.to_string())?.chi2;
    ensure(chi2 == 4.0, format!("{cases} U cases exact, Friedman chi2 = {chi2}"))
}

fn fitts_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut tp_ok = true;
    for _ in 0..1000 {
        let (a, b) = (rng.random_range(-1.0..2.0), rng.random_range(0.05..2.0));
        let pts: Vec<(f64, f64)> = (1..=9)
            .map(|i| {
                let id = IdForm::Fitts.index_of_difficulty(i as f64 / 10.0, 0.1);
                (id, a + b * id)
            })
            .collect();
        let fit = fitts_fit(&pts).map_err(|e| e.to_string())?;
        worst = worst.max((fit.slope - b).abs());
        tp_ok &= fit.throughput == Some(1.0 / fit.slope);
    }
    ensure(worst < 1e-9 && tp_ok, format!("1000 planted models, max slope error {worst:.1e}"))
}

fn bound_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut updates = 0u64;
    for seq in 0..1_000_000u32 {
        let params = TrackerParams {
            window_seconds: rng.random_range(2..40) as f64 / 20.0,
            nominal_rate: 20.0,
            shrink_rate: rng.random_range(0.001..0.9),
            margin: rng.random_range(0.0..0.49),
            frozen: false,
        };
        let lo = rng.random_range(-1.0..1.0);
        let mut t = BoundTracker::new(Bounds::new(lo, lo + rng.random_range(1e-9..2.0)).unwrap(), params).unwrap();
        let center: f64 = rng.random_range(-1.0..2.0);
        let spread: f64 = 10f64.powf(rng.random_range(-9.0..0.5));
        for _ in 0..rng.random_range(1..24) {
            let v = match rng.random_range(0..20) {
                0 => f64::NAN,
                1 => center,
                2 => rng.random_range(-5.0..5.0),
                _ => center + spread * rng.random_range(-1.0..1.0),
            };
            let b = t.update(v);
            updates += 1;
            if b.lower().partial_cmp(&b.upper()) != Some(std::cmp::Ordering::Less) {
                return Err(format!("sequence {seq}: bounds {b:?}"));
            }
            if v.is_finite() && !(b.lower() <= v && v <= b.upper()) {
                return Err(format!("sequence {seq}: {v} outside {b:?}"));
            }
        }
    }
    Ok(format!("10^6 sequences, {updates} updates"))
}

fn cohort(profile: Profile, seeds: std::ops::Range<u64>, phantom: &Phantom) -> Result<Vec<SessionLog>, String> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(8) as u64;
    let chunk = (seeds.end - seeds.start).div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let from = seeds.start + w * chunk;
                let to = (from + chunk).min(seeds.end);
                s.spawn(move || run_cohort(profile, from..to, phantom, &SessionConfig::default()))
            })
            .collect();
        let mut logs = Vec::new();
        for h in handles {
            logs.extend(h.join().map_err(|_| "worker panicked".to_string())?.map_err(|e| e.to_string())?);
        }
        Ok(logs)
    })
}

struct CohortStats {
    success: f64,
    r2: f64,
    rt: f64,
    peak: f64,
}

fn cohort_stats(logs: &[SessionLog]) -> CohortStats {
    let trials: Vec<&TrialRecord> = logs.iter().flat_map(|l| &l.trials).filter(|t| !t.target.is_reset()).collect();
    let metrics: Vec<TrialMetrics> = trials.iter().map(|t| TrialMetrics::compute(t)).collect();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    CohortStats {
        success: 100.0 * trials.iter().filter(|t| t.succeeded).count() as f64 / trials.len() as f64,
        r2: mean(metrics.iter().filter_map(|m| m.r_squared_minjerk).collect()),
        rt: mean(metrics.iter().filter_map(|m| m.reaction_time).collect()),
        peak: mean(metrics.iter().map(|m| m.max_velocity).collect()),
    }
}

fn closed_loop() -> Outcome {
    let phantom = Phantom::new(PhantomParams::scaled(0.25)).unwrap();
    let start = Instant::now();
    let able = cohort_stats(&cohort(Profile::AbleBodied, 0..50, &phantom)?);
    let sci = cohort_stats(&cohort(Profile::Sci, 0..50, &phantom)?);
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!(
        "able: success {:.1} %, R2 {:.3}, RT {:.3} s, peak {:.1} %/s; sci: success {:.1} %, RT {:.3} s, peak {:.1} %/s; {:.0} s",
        able.success, able.r2, able.rt, able.peak, sci.success, sci.rt, sci.peak, elapsed
    );
    ensure(
        able.success >= 85.0
            && able.r2 >= 0.80
            && sci.success < able.success
            && sci.rt > able.rt
            && sci.peak > able.peak
            && elapsed <= 300.0,
        detail,
    )
}

fn real_time() -> Outcome {
    const FRAMES: usize = 1200;
    const PERIOD: Duration = Duration::from_millis(50);
    let phantom = Phantom::new(PhantomParams::default()).unwrap();
    let refs = ReferencePair::new(phantom.render(0.0, 0.0).unwrap(), phantom.render(1.0, 0.0).unwrap())
        .map_err(|e| e.to_string())?;
    let mut pipeline =
        Pipeline::new(&refs, TrackerParams::default(), Orientation::Inverted).map_err(|e| e.to_string())?;
    let (tx, rx) = mpsc::sync_channel::<(Frame, Instant)>(8);
    let origin = Instant::now() + Duration::from_millis(200);
    let producer = thread::spawn(move || {
        for k in 0..FRAMES {
            let t = k as f64 / 20.0;
            let a = 0.5 - 0.5 * (t * std::f64::consts::PI / 5.0).cos();
            let frame = phantom.render(a, t).expect("render");
            let due = origin + PERIOD * k as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
            if tx.send((frame, Instant::now())).is_err() {
                return;
            }
        }
    });
    let mut latencies = Vec::with_capacity(FRAMES);
    let mut first = None;
    let mut last = origin;
    for (frame, emitted) in rx {
        first.get_or_insert(emitted);
        pipeline.process(&frame).map_err(|e| e.to_string())?;
        last = Instant::now();
        latencies.push((last - emitted).as_secs_f64());
    }
    producer.join().map_err(|_| "producer panicked".to_string())?;
    let span = (last - first.unwrap_or(origin)).as_secs_f64();
    let fps = latencies.len() as f64 / span;
    let worst = latencies.iter().copied().fold(0.0, f64::max);
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    ensure(
        latencies.len() == FRAMES && fps >= 20.0 && worst < 0.050,
        format!(
            "{} frames 660x363 over {span:.2} s = {fps:.2} fps, latency median {:.1} ms max {:.1} ms",
            latencies.len(),
            median * 1e3,
            worst * 1e3
        ),
    )
}

fn csv_bytes(logs: &[SessionLog]) -> Vec<u8> {
    let sessions: Vec<SessionTrials> = logs
        .iter()
        .map(|l| SessionTrials {
            group: l.header.group.clone(),
            session: l.header.session.clone(),
            trials: l.trials.clone(),
        })
        .collect();
    let analysis = analyze(&sessions);
    let mut out = Vec::new();
    write_trial_csv(&mut out, &analysis.rows).unwrap();
    write_plot_csv(&mut out, &analysis.plot).unwrap();
    out
}

fn determinism() -> Outcome {
    let phantom = Phantom::new(PhantomParams::scaled(0.25)).unwrap();
    let run = || -> Result<(Vec<Vec<u8>>, Vec<u8>), String> {
        let mut logs =
            run_cohort(Profile::AbleBodied, 3..5, &phantom, &SessionConfig::default()).map_err(|e| e.to_string())?;
        logs.extend(run_cohort(Profile::Sci, 3..5, &phantom, &SessionConfig::default()).map_err(|e| e.to_string())?);
        let bytes = logs.iter().map(|l| log_bytes(l).unwrap()).collect();
        Ok((bytes, csv_bytes(&logs)))
    };
    let (a, b) = (run()?, run()?);
    let size: usize = a.0.iter().map(Vec::len).sum();
    ensure(a == b, format!("4 sessions, {size} log bytes and {} CSV bytes identical", a.1.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("signal identities", signal_identities),
        ("correlation oracle", correlation_oracle),
        ("filter oracle", filter_oracle),
        ("minimum-jerk identities", min_jerk_identities),
        ("task-machine oracle", task_oracle),
        ("metric formulas", metric_formulas),
        ("statistics oracles", stats_oracles),
        ("Fitts recovery", fitts_recovery),
        ("bound-tracker fuzz", bound_fuzz),
        ("closed-loop directions", closed_loop),
        ("real-time budget", real_time),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("{} of {} criteria passed", 12 - failed, 12);
    if failed > 0 {
        std::process::exit(1);
    }
}
