//! `sonomyo` command-line front end.

mod commands;

use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use sonomyo::phantom::Profile;
use sonomyo::session::config::{DEFAULT_PORT, PORT_ENV};

#[derive(Debug, Parser)]
#[command(name = "sonomyo", version, about = "Ultrasound muscle-computer interface toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    AbleBodied,
    Sci,
    Inert,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::AbleBodied => Profile::AbleBodied,
            ProfileArg::Sci => Profile::Sci,
            ProfileArg::Inert => Profile::Inert,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record rest and flexion references from the configured source.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reference manifest to write; images go beside it.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run one session headless against the configured source.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reuse a manifest written by `calibrate` instead of calibrating.
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Session log path; defaults to the data directory.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Pacing relative to the frame rate; 0 runs as fast as possible.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
    },
    /// Closed-loop sessions with a virtual subject, one log per seed.
    Simulate {
        #[arg(long, value_enum, default_value = "able-bodied")]
        profile: ProfileArg,
        /// Seeds as a list or inclusive range: `1,2,5` or `1..10`.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Target levels per session; each is followed by a reset trial.
        #[arg(long)]
        levels: Option<usize>,
        /// Phantom image scale; 1 is the scanner's full resolution.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the session logs.
        #[arg(long, short)]
        output: PathBuf,
        /// Concurrent sessions; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Per-trial metrics, group statistics and plot series from session logs.
    Analyze {
        /// Session logs, or directories holding them.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Start the HTTP/WebSocket gateway.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pacing relative to the frame rate; 0 runs as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Where session logs go; defaults to `sessions/` in the data directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Calibrate { config, output } => commands::calibrate(config.as_deref(), &output),
        Command::Run { config, references, seed, output, speed } => {
            commands::run(config.as_deref(), references.as_deref(), seed, output, speed)
        }
        Command::Simulate { profile, seeds, levels, scale, config, output, jobs } => {
            let seeds = commands::parse_seeds(&seeds)?;
            commands::simulate(profile.into(), &seeds, levels, scale, config.as_deref(), &output, jobs)
        }
        Command::Analyze { logs, output } => commands::analyze(&logs, &output),
        Command::Serve { host, port, config, speed, log_dir } => {
            commands::serve(host, port, config.as_deref(), speed, log_dir)
        }
    }
}
