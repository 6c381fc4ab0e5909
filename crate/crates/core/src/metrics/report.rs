//! Batch analysis: per-trial tables, group summaries and plot series.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{
    fitts_fit, fitts_points, friedman_test, mann_whitney_u, minjerk, r_squared, velocity_profile, Alternative,
    FittsFit, FriedmanResult, IdForm, MannWhitney, TrialMetrics,
};
use crate::task::{TrialEventKind, TrialRecord};

/// Resampling step of the plot series, seconds.
pub const PLOT_STEP: f64 = 0.05;

/// Trials of one recorded session, tagged with its group.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrials {
    pub group: String,
    pub session: String,
    pub trials: Vec<TrialRecord>,
}

/// Per-trial metrics plus identification, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub group: String,
    pub session: String,
    pub metrics: TrialMetrics,
}

/// Outcome measures compared between groups and across target positions,
/// with the direction tested for the first group against the second.
pub const METRICS: [(&str, Alternative); 8] = [
    ("success_rate", Alternative::Greater),
    ("reaction_time", Alternative::TwoSided),
    ("movement_time", Alternative::Less),
    ("path_efficiency", Alternative::Greater),
    ("endpoint_error", Alternative::Less),
    ("endpoint_stability", Alternative::Less),
    ("max_velocity", Alternative::TwoSided),
    ("r_squared_minjerk", Alternative::TwoSided),
];

/// Value of a named metric for one trial; success is scored 100 or 0.
pub fn metric_value(m: &TrialMetrics, name: &str) -> Option<f64> {
    match name {
        "success_rate" => Some(if m.succeeded { 100.0 } else { 0.0 }),
        "reaction_time" => m.reaction_time,
        "movement_time" => m.movement_time,
        "path_efficiency" => m.path_efficiency,
        "endpoint_error" => m.endpoint_error,
        "endpoint_stability" => m.endpoint_stability,
        "max_velocity" => Some(m.max_velocity),
        "r_squared_minjerk" => m.r_squared_minjerk,
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation.
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, sd: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self { n, mean: Some(mean), sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub sessions: usize,
    pub trials: usize,
    /// Success rate is summarized per session; everything else per trial.
    pub metrics: BTreeMap<String, Summary>,
    /// Effect of target position, blocks are sessions with a value at every target.
    pub friedman: BTreeMap<String, Option<FriedmanResult>>,
    pub fitts: Option<FittsFit>,
    /// R² of each per-target mean trajectory against its minimum-jerk reference.
    pub mean_trajectory_r_squared: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub first: String,
    pub second: String,
    pub alternative: Alternative,
    pub result: Option<MannWhitney>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub groups: Vec<GroupSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Mean trajectory of one target within a group, resampled on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub group: String,
    pub target: f64,
    pub t: f64,
    pub n: usize,
    pub mean_position: f64,
    pub min_jerk: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub rows: Vec<TrialRow>,
    pub summary: AnalysisSummary,
    pub plot: Vec<PlotRow>,
}

fn target_key(center: f64) -> String {
    format!("{center:.2}")
}

/// Metrics for every task trial (resets excluded), in input order.
pub fn trial_rows(sessions: &[SessionTrials]) -> Vec<TrialRow> {
    sessions
        .iter()
        .flat_map(|s| {
            s.trials.iter().filter(|t| !t.target.is_reset()).map(|t| TrialRow {
                group: s.group.clone(),
                session: s.session.clone(),
                metrics: TrialMetrics::compute(t),
            })
        })
        .collect()
}

fn group_names(sessions: &[SessionTrials]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in sessions {
        if !names.contains(&s.group) {
            names.push(s.group.clone());
        }
    }
    names
}

/// Values entering the between-group comparison of `metric`.
fn comparison_values(rows: &[TrialRow], sessions: &[SessionTrials], group: &str, metric: &str) -> Vec<f64> {
    if metric == "success_rate" {
        return sessions
            .iter()
            .filter(|s| s.group == group)
            .filter_map(|s| super::success_rate(&s.trials).ok())
            .collect();
    }
    rows.iter().filter(|r| r.group == group).filter_map(|r| metric_value(&r.metrics, metric)).collect()
}

fn friedman_for(rows: &[TrialRow], metric: &str) -> Option<FriedmanResult> {
    let mut targets: Vec<f64> = rows.iter().map(|r| r.metrics.target_center).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    let mut by_session: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = metric_value(&r.metrics, metric) {
            by_session.entry(&r.session).or_default().insert(target_key(r.metrics.target_center), v);
        }
    }
    let blocks: Vec<Vec<f64>> = by_session
        .values()
        .filter_map(|m| targets.iter().map(|t| m.get(&target_key(*t)).copied()).collect::<Option<Vec<f64>>>())
        .collect();
    friedman_test(&blocks).ok()
}

fn summarize_group(group: &str, sessions: &[SessionTrials], rows: &[TrialRow]) -> GroupSummary {
    let group_sessions: Vec<&SessionTrials> = sessions.iter().filter(|s| s.group == group).collect();
    let group_rows: Vec<TrialRow> = rows.iter().filter(|r| r.group == group).cloned().collect();
    let metrics = METRICS
        .iter()
        .map(|(name, _)| (name.to_string(), Summary::of(&comparison_values(rows, sessions, group, name))))
        .collect();
    let friedman = METRICS.iter().map(|(name, _)| (name.to_string(), friedman_for(&group_rows, name))).collect();
    let records: Vec<TrialRecord> = group_sessions.iter().flat_map(|s| s.trials.iter().cloned()).collect();
    let fitts = fitts_fit(&fitts_points(&records, IdForm::Fitts)).ok();

    GroupSummary {
        group: group.to_string(),
        sessions: group_sessions.len(),
        trials: group_rows.len(),
        metrics,
        friedman,
        fitts,
        mean_trajectory_r_squared: BTreeMap::new(),
    }
}

/// Mean trajectory per target plus its matched minimum-jerk reference.
fn plot_series(group: &str, target: f64, trials: &[&TrialRecord]) -> (Vec<PlotRow>, Option<f64>) {
    let horizon =
        trials.iter().filter_map(|t| t.samples.last().map(|s| s.timestamp - t.presented_at)).fold(0.0, f64::max);
    let steps = (horizon / PLOT_STEP).floor() as usize;
    let mut times = Vec::new();
    let mut means = Vec::new();
    let mut counts = Vec::new();
    for k in 0..=steps {
        let t = k as f64 * PLOT_STEP;
        let held: Vec<f64> = trials
            .iter()
            .filter_map(|trial| {
                let rel = |s: &crate::normalization::CursorSample| s.timestamp - trial.presented_at;
                let last = trial.samples.last()?;
                if rel(last) < t {
                    return None;
                }
                let i = trial.samples.partition_point(|s| rel(s) <= t);
                Some(trial.samples[i.saturating_sub(1)].position)
            })
            .collect();
        if held.is_empty() {
            continue;
        }
        times.push(t);
        counts.push(held.len());
        means.push(held.iter().sum::<f64>() / held.len() as f64);
    }
    if times.is_empty() {
        return (Vec::new(), None);
    }

    let mean_time = |kind: TrialEventKind| {
        let v: Vec<f64> = trials
            .iter()
            .filter(|t| {
                t.first_event(TrialEventKind::MovementOnset).is_some()
                    && t.first_event(TrialEventKind::BandEntry).is_some()
            })
            .filter_map(|t| t.first_event(kind).map(|e| e.timestamp - t.presented_at))
            .collect();
        Summary::of(&v).mean
    };
    let at = |t: f64| {
        let i = times.partition_point(|&s| s <= t).saturating_sub(1);
        means[i]
    };
    let segment = match (mean_time(TrialEventKind::MovementOnset), mean_time(TrialEventKind::BandEntry)) {
        (Some(on), Some(entry)) if entry > on => Some((on, entry, at(on), at(entry))),
        _ => None,
    };
    let reference: Vec<f64> = times
        .iter()
        .map(|&t| match segment {
            Some((on, entry, p0, p1)) => minjerk::position(p0, p1, entry - on, t - on),
            None => means[0],
        })
        .collect();
    let velocity = velocity_profile(&times, &means);
    let fit = segment.and_then(|(on, entry, ..)| {
        let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= on && times[i] <= entry).collect();
        let obs: Vec<f64> = idx.iter().map(|&i| means[i]).collect();
        let refs: Vec<f64> = idx.iter().map(|&i| reference[i]).collect();
        (obs.len() >= 3).then(|| r_squared(&obs, &refs)).flatten()
    });
    let rows = (0..times.len())
        .map(|i| PlotRow {
            group: group.to_string(),
            target,
            t: times[i],
            n: counts[i],
            mean_position: means[i],
            min_jerk: reference[i],
            velocity: velocity[i],
        })
        .collect();
    (rows, fit)
}

/// Runs the full analysis over a set of sessions.
pub fn analyze(sessions: &[SessionTrials]) -> Analysis {
    let rows = trial_rows(sessions);
    let names = group_names(sessions);

    let mut plot = Vec::new();
    let mut mean_fits: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for name in &names {
        let records: Vec<&TrialRecord> = sessions
            .iter()
            .filter(|s| &s.group == name)
            .flat_map(|s| s.trials.iter().filter(|t| !t.target.is_reset()))
            .collect();
        let mut targets: Vec<f64> = records.iter().map(|t| t.target.center).collect();
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        for target in targets {
            let trials: Vec<&TrialRecord> = records.iter().copied().filter(|t| t.target.center == target).collect();
            let (series, fit) = plot_series(name, target, &trials);
            plot.extend(series);
            mean_fits.entry(name.clone()).or_default().insert(target_key(target), fit);
        }
    }

    let groups = names
        .iter()
        .map(|name| {
            let mut g = summarize_group(name, sessions, &rows);
            g.mean_trajectory_r_squared = mean_fits.remove(name).unwrap_or_default();
            g
        })
        .collect();

    let mut comparisons = Vec::new();
    if let [first, second, ..] = names.as_slice() {
        for (metric, alternative) in METRICS {
            let a = comparison_values(&rows, sessions, first, metric);
            let b = comparison_values(&rows, sessions, second, metric);
            comparisons.push(Comparison {
                metric: metric.to_string(),
                first: first.clone(),
                second: second.clone(),
                alternative,
                result: mann_whitney_u(&a, &b, alternative).ok(),
            });
        }
    }
    Analysis { rows, summary: AnalysisSummary { groups, comparisons }, plot }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const TRIAL_CSV_HEADER: [&str; 12] = [
    "group",
    "session",
    "trial_index",
    "target_center",
    "succeeded",
    "reaction_time",
    "movement_time",
    "path_efficiency",
    "endpoint_error",
    "endpoint_stability",
    "max_velocity",
    "r_squared_minjerk",
];

/// One row per trial; absent values are empty cells.
pub fn write_trial_csv<W: Write>(out: W, rows: &[TrialRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_CSV_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.group.clone(),
            r.session.clone(),
            m.trial_index.to_string(),
            m.target_center.to_string(),
            m.succeeded.to_string(),
            opt(m.reaction_time),
            opt(m.movement_time),
            opt(m.path_efficiency),
            opt(m.endpoint_error),
            opt(m.endpoint_stability),
            m.max_velocity.to_string(),
            opt(m.r_squared_minjerk),
        ])?;
    }
    w.flush()
}

pub fn write_plot_csv<W: Write>(out: W, rows: &[PlotRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
