//! Closed-loop sessions with a virtual subject and the phantom.

use crate::calibration::{CalibrationPlan, Calibrator, TrainingDatabase};
use crate::phantom::{Phantom, Profile, VirtualSubject, VirtualSubjectParams};
use crate::session::log::{LogHeader, LOG_VERSION};
use crate::session::{Pipeline, SessionConfig, SessionError, SessionLog, SessionRunner, SourceSpec};
use crate::task::{build_session_plan, DriverOutput, SessionPlan, TrialEventKind};

/// Calibration creation stamp used in simulation so logs are reproducible.
pub const SIMULATED_CREATED_AT: u64 = 0;

fn subject_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED
}

/// Runs the calibration protocol with the subject following the prompts.
pub fn simulate_calibration(
    subject: &VirtualSubject,
    phantom: &Phantom,
    plan: &CalibrationPlan,
    frame_rate: f64,
) -> Result<(TrainingDatabase, u64), SessionError> {
    let mut cal = Calibrator::new(plan.clone())?;
    let mut k = 0u64;
    loop {
        let t = k as f64 / frame_rate;
        if t >= plan.total_duration() {
            break;
        }
        cal.push(phantom.render(subject.calibration_activation(t, plan), t)?)?;
        k += 1;
    }
    Ok((cal.finish(SIMULATED_CREATED_AT)?, k))
}

/// Calibrates, then runs `plan` with the subject closing the loop on the
/// cursor it sees. Returns the session log and the calibration it used.
pub fn closed_loop_session(
    subject: &VirtualSubjectParams,
    phantom: &Phantom,
    plan: &SessionPlan,
    config: &SessionConfig,
) -> Result<(SessionLog, TrainingDatabase), SessionError> {
    let rate = config.frame_rate;
    let mut person = VirtualSubject::new(*subject, subject_seed(config.seed));
    let (db, mut k) = simulate_calibration(&person, phantom, &config.calibration, rate)?;
    let pipeline = Pipeline::new(&db.refs, config.tracker, config.pipeline.orientation)?;

    let task_start = k as f64 / rate;
    let header = LogHeader {
        version: LOG_VERSION,
        group: config.group.clone(),
        session: format!("{}-{}", config.group, config.seed),
        config: SessionConfig {
            source: SourceSpec::Synthetic { phantom: *phantom.params(), subject: *subject },
            ..config.clone()
        },
        plan: plan.clone(),
        task_start,
        initial_bounds: pipeline.initial_bounds(),
        references: None,
    };
    let mut runner = SessionRunner::new(header, pipeline, None);

    let present = |person: &mut VirtualSubject, outputs: &[DriverOutput]| {
        for out in outputs {
            if let DriverOutput::Event { target, event, .. } = out {
                if event.kind == TrialEventKind::Presented {
                    person.present(*target, event.timestamp);
                }
            }
        }
    };
    let outputs = runner.start();
    present(&mut person, &outputs);

    let max_frames = k + ((plan.targets.len() as f64 * plan.trial_timeout + 1.0) * rate).ceil() as u64;
    while !runner.is_finished() && k < max_frames {
        let t = k as f64 / rate;
        let frame = phantom.render(person.activation(t), t)?;
        let (record, outputs) = runner.push_frame(&frame)?;
        person.observe(&record.cursor());
        present(&mut person, &outputs);
        k += 1;
    }
    Ok((runner.finish()?, db))
}

/// [`closed_loop_session`] without the calibration database.
pub fn closed_loop_run(
    subject: &VirtualSubjectParams,
    phantom: &Phantom,
    plan: &SessionPlan,
    config: &SessionConfig,
) -> Result<SessionLog, SessionError> {
    closed_loop_session(subject, phantom, plan, config).map(|(log, _)| log)
}

/// One seeded session per seed, each with its own shuffled plan.
pub fn run_cohort(
    profile: Profile,
    seeds: impl IntoIterator<Item = u64>,
    phantom: &Phantom,
    base: &SessionConfig,
) -> Result<Vec<SessionLog>, SessionError> {
    let subject = VirtualSubjectParams::for_profile(profile);
    let group = match profile {
        Profile::AbleBodied => "able_bodied",
        Profile::Sci => "sci",
        Profile::Inert => "inert",
    };
    seeds
        .into_iter()
        .map(|seed| {
            let config = SessionConfig { seed, group: group.into(), ..base.clone() };
            let plan = build_session_plan(seed, &config.plan)?;
            closed_loop_run(&subject, phantom, &plan, &config)
        })
        .collect()
}
