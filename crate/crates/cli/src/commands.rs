use std::fs::File;
use std::io::BufWriter;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use sonomyo::calibration::{Calibrator, TrainingDatabase};
use sonomyo::frame::Frame;
use sonomyo::metrics::report::{analyze as run_analysis, write_plot_csv, write_trial_csv, SessionTrials};
use sonomyo::phantom::{Phantom, PhantomParams, Profile, VirtualSubject, VirtualSubjectParams};
use sonomyo::session::log::{load_references, write_references, ReferenceManifest};
use sonomyo::session::source::FrameSource;
use sonomyo::session::{
    data_dir, read_log, write_log, CaptureStub, LogHeader, LogWriter, Pipeline, ReplaySource, SessionConfig,
    SessionError, SessionLog, SessionRunner, SourceSpec, LOG_VERSION,
};
use sonomyo::simulation::closed_loop_session;
use sonomyo::task::{build_session_plan, DriverOutput, TrialEventKind};
use sonomyo_gateway::GatewayConfig;

fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => SessionConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SessionConfig::default()),
    }
}

/// `1,2,5`, `3..7` (inclusive), or a mix of both.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?);
            if b < a {
                bail!("empty seed range {part}");
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().with_context(|| format!("bad seed {part:?}"))?);
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

enum Feed {
    Synthetic { phantom: Phantom, subject: Box<VirtualSubject>, next: u64, rate: f64 },
    Replay { source: ReplaySource, pending: Option<Frame> },
}

impl Feed {
    fn open(config: &SessionConfig) -> Result<Self> {
        match &config.source {
            SourceSpec::Synthetic { phantom, subject } => Ok(Feed::Synthetic {
                phantom: Phantom::new(*phantom)?,
                subject: Box::new(VirtualSubject::new(*subject, config.seed)),
                next: 0,
                rate: config.frame_rate,
            }),
            SourceSpec::Replay { path } => Ok(Feed::Replay {
                source: ReplaySource::open(path).with_context(|| format!("opening recording {}", path.display()))?,
                pending: None,
            }),
            SourceSpec::Manual { .. } => bail!("a manual source needs live input; use `sonomyo serve`"),
            SourceSpec::CaptureStub { device } => {
                CaptureStub::new(device.clone()).next_frame()?;
                bail!("capture device {device} yielded nothing")
            }
        }
    }

    fn peek_time(&mut self) -> Result<Option<f64>> {
        Ok(match self {
            Feed::Synthetic { next, rate, .. } => Some(*next as f64 / *rate),
            Feed::Replay { source, pending } => {
                if pending.is_none() {
                    *pending = source.next_frame()?;
                }
                pending.as_ref().map(Frame::timestamp)
            }
        })
    }

    fn next(&mut self, calibration: Option<(f64, &sonomyo::calibration::CalibrationPlan)>) -> Result<Option<Frame>> {
        match self {
            Feed::Synthetic { phantom, subject, next, rate } => {
                let t = *next as f64 / *rate;
                *next += 1;
                let a = match calibration {
                    Some((rel, plan)) => subject.calibration_activation(rel, plan),
                    None => subject.activation(t),
                };
                Ok(Some(phantom.render(a, t)?))
            }
            Feed::Replay { source, pending } => match pending.take() {
                Some(f) => Ok(Some(f)),
                None => Ok(source.next_frame()?),
            },
        }
    }

    fn apply(&mut self, outputs: &[DriverOutput]) {
        if let Feed::Synthetic { subject, .. } = self {
            for out in outputs {
                if let DriverOutput::Event { target, event, .. } = out {
                    if event.kind == TrialEventKind::Presented {
                        subject.present(*target, event.timestamp);
                    }
                }
            }
        }
    }

    fn observe(&mut self, cursor: &sonomyo::normalization::CursorSample) {
        if let Feed::Synthetic { subject, .. } = self {
            subject.observe(cursor);
        }
    }
}

fn calibrate_feed(feed: &mut Feed, config: &SessionConfig) -> Result<TrainingDatabase> {
    let plan = &config.calibration;
    let mut cal = Calibrator::new(plan.clone())?;
    let Some(start) = feed.peek_time()? else { bail!("source has no frames") };
    while let Some(t) = feed.peek_time()? {
        let rel = t - start;
        if rel >= plan.total_duration() {
            break;
        }
        let frame = feed.next(Some((rel, plan)))?.expect("peeked frame");
        cal.push(frame.with_timestamp(rel))?;
    }
    Ok(cal.finish(now())?)
}

fn manifest_database(path: &Path) -> Result<TrainingDatabase> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: ReferenceManifest = serde_json::from_str(&text).context("parsing reference manifest")?;
    Ok(TrainingDatabase {
        refs: load_references(path, &manifest)?,
        flex_window_frames: manifest.flex_window_frames,
        rest_window_frames: manifest.rest_window_frames,
        created_at: manifest.created_at,
    })
}

pub fn calibrate(config: Option<&Path>, output: &Path) -> Result<()> {
    let config = load_config(config)?;
    let mut feed = Feed::open(&config)?;
    let db = calibrate_feed(&mut feed, &config)?;
    let manifest = write_references(output, &db)?;
    std::fs::write(output, serde_json::to_string_pretty(&manifest)?)?;
    println!("references written to {}", output.display());
    Ok(())
}

pub fn run(
    config: Option<&Path>,
    references: Option<&Path>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    speed: f64,
) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if !(speed >= 0.0 && speed.is_finite()) {
        bail!("speed must be non-negative");
    }
    let mut feed = Feed::open(&config)?;
    let db = match references {
        Some(p) => manifest_database(p)?,
        None => calibrate_feed(&mut feed, &config)?,
    };
    let pipeline = Pipeline::new(&db.refs, config.tracker, config.pipeline.orientation)?;
    let plan = build_session_plan(config.seed, &config.plan)?;
    let Some(task_start) = feed.peek_time()? else { bail!("source ended during calibration") };
    let session = format!("{}-{}", config.group, config.seed);
    let path = output
        .or_else(|| config.output.resolved_log_path())
        .unwrap_or_else(|| data_dir().join("sessions").join(format!("{session}.jsonl")));
    let header = LogHeader {
        version: LOG_VERSION,
        group: config.group.clone(),
        session,
        config: config.clone(),
        plan,
        task_start,
        initial_bounds: pipeline.initial_bounds(),
        references: Some(write_references(&path, &db)?),
    };
    let writer = LogWriter::create(&path, &header)?;
    let rate = config.frame_rate;
    let max_frames = ((header.plan.targets.len() as f64 * header.plan.trial_timeout + 1.0) * rate).ceil() as u64;
    let mut runner = SessionRunner::new(header, pipeline, Some(writer));
    let outputs = runner.start();
    feed.apply(&outputs);

    let began = Instant::now();
    let mut frames = 0u64;
    while !runner.is_finished() && frames < max_frames {
        let Some(frame) = feed.next(None)? else { break };
        if speed > 0.0 {
            let due = Duration::from_secs_f64(frames as f64 / (rate * speed));
            if let Some(wait) = due.checked_sub(began.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let (record, outputs) = runner.push_frame(&frame)?;
        feed.observe(&record.cursor());
        feed.apply(&outputs);
        frames += 1;
    }
    if !runner.is_finished() {
        eprintln!("source ended before the plan finished; the running trial is logged as aborted");
        runner.abort()?;
    }
    let log = runner.finish()?;
    let successes = log.trials.iter().filter(|t| t.succeeded && !t.target.is_reset()).count();
    let tasks = log.trials.iter().filter(|t| !t.target.is_reset()).count();
    println!("{}: {successes}/{tasks} targets acquired, log at {}", log.header.session, path.display());
    Ok(())
}

fn write_simulated(path: &Path, mut log: SessionLog, db: &TrainingDatabase) -> Result<(), SessionError> {
    log.header.references = Some(write_references(path, db)?);
    write_log(path, &log)
}

pub fn simulate(
    profile: Profile,
    seeds: &[u64],
    levels: Option<usize>,
    scale: f64,
    config: Option<&Path>,
    output: &Path,
    jobs: Option<usize>,
) -> Result<()> {
    let mut base = load_config(config)?;
    if let Some(l) = levels {
        base.plan.levels = l;
    }
    let phantom_params = match &base.source {
        SourceSpec::Synthetic { phantom, .. } if config.is_some() => *phantom,
        _ => PhantomParams::scaled(scale),
    };
    let phantom = Arc::new(Phantom::new(phantom_params)?);
    let subject = VirtualSubjectParams::for_profile(profile);
    let group = match profile {
        Profile::AbleBodied => "able_bodied",
        Profile::Sci => "sci",
        Profile::Inert => "inert",
    };
    if profile == Profile::Inert {
        base.tracker.frozen = true;
    }
    std::fs::create_dir_all(output)?;

    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1);
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| {
                while let Some(&seed) = seeds.get(next.fetch_add(1, Ordering::Relaxed)) {
                    let config = SessionConfig { seed, group: group.into(), ..base.clone() };
                    let path = output.join(format!("{group}-{seed}.jsonl"));
                    let result = build_session_plan(seed, &config.plan)
                        .map_err(SessionError::from)
                        .and_then(|plan| closed_loop_session(&subject, &phantom, &plan, &config))
                        .and_then(|(log, db)| write_simulated(&path, log, &db));
                    match result {
                        Ok(()) => println!("{}", path.display()),
                        Err(e) => failures.lock().expect("failure list").push(format!("seed {seed}: {e}")),
                    }
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failure list");
    if !failures.is_empty() {
        bail!("{} of {} sessions failed:\n{}", failures.len(), seeds.len(), failures.join("\n"));
    }
    Ok(())
}

fn collect_logs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut logs = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            logs.extend(found);
        } else {
            logs.push(input.clone());
        }
    }
    if logs.is_empty() {
        bail!("no session logs found");
    }
    Ok(logs)
}

pub fn analyze(inputs: &[PathBuf], output: &Path) -> Result<()> {
    let mut sessions = Vec::new();
    for path in collect_logs(inputs)? {
        let log = match read_log(&path) {
            Ok(log) => log,
            Err(SessionError::Truncated(log)) => {
                eprintln!("{}: truncated, using {} complete trials", path.display(), log.trials.len());
                *log
            }
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        sessions.push(SessionTrials { group: log.header.group, session: log.header.session, trials: log.trials });
    }
    let analysis = run_analysis(&sessions);
    std::fs::create_dir_all(output)?;
    write_trial_csv(BufWriter::new(File::create(output.join("trials.csv"))?), &analysis.rows)?;
    write_plot_csv(BufWriter::new(File::create(output.join("trajectories.csv"))?), &analysis.plot)?;
    std::fs::write(output.join("summary.json"), serde_json::to_string_pretty(&analysis.summary)?)?;
    println!("{} sessions, {} trials analyzed into {}", sessions.len(), analysis.rows.len(), output.display());
    Ok(())
}

pub fn serve(host: IpAddr, port: u16, config: Option<&Path>, speed: f64, log_dir: Option<PathBuf>) -> Result<()> {
    let session = load_config(config)?;
    let gateway = GatewayConfig {
        host,
        port,
        speed,
        log_dir: Some(log_dir.unwrap_or_else(|| data_dir().join("sessions"))),
        session,
        ..GatewayConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let running = sonomyo_gateway::start(gateway).await?;
        println!("listening on http://{}", running.addr());
        running.wait().await
    })?;
    Ok(())
}
