//! `stochctl`: batch front-end for scenario generation, the three solvers
//! and their comparison. All outputs are CSV.

mod commands;
mod rundir;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad flags, bad config contents, inconsistent inputs: exit status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "stochctl", version, about = "Stochastic optimal control by SDP, particles and scenario trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Cap on parallel workers (default: machine parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Only print warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Problem and solver settings (`key = value`); dam defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Training scenarios; the test set has the same size.
    #[arg(long = "n-scenarios", default_value_t = 200)]
    pub n_scenarios: usize,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sdp,
    Particle,
    Tree,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sdp => "sdp",
            Method::Particle => "particle",
            Method::Tree => "tree",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw training and test scenarios.
    Gen(Common),
    /// Solve with one method and simulate its policy on the test set.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        /// Directory with `train.csv` and `test.csv` from `gen`; drawn from
        /// the config and seed when omitted.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Overrides the iteration limit of the particle and tree solvers.
        #[arg(long = "max-iters")]
        max_iters: Option<usize>,
        /// Write wall-clock seconds into the iteration log.
        #[arg(long)]
        timings: bool,
    },
    /// Compare solve outputs against the SDP run among them.
    Compare {
        /// Solve output directories; exactly one must hold an SDP run.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// First stage of the late-stage RMS summary.
        #[arg(long = "late-from", default_value_t = 20)]
        late_from: usize,
    },
}

/// Exit status for an error: 1 usage, 2 numerical failure, 3 IO failure.
fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<stochctl::Error>() {
            return match e {
                stochctl::Error::Numerical(_) | stochctl::Error::NonFinite { .. } => 2,
                stochctl::Error::Io { .. } | stochctl::Error::Parse { .. } => 3,
                stochctl::Error::InvalidArgument(_) | stochctl::Error::DimensionMismatch { .. } => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .format_target(false)
        .init();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
