#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selpulse::spin::TransferTarget;
use selpulse::verify::Suite;

mod commands;

use commands::CliError;

#[derive(Parser)]
#[command(name = "selpulse", version, about = "Time-optimal selective pulses for two spins with opposite offsets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory for the emitted files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for scans and restarts (default: all cores)
    #[arg(long, env = "SELPULSE_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate a pulse file and write the trajectory
    Simulate {
        /// Pulse JSON {"omega", "segments": [{"dt","ux","uy"}]}
        pulse: PathBuf,
        /// Override the offset stored in the pulse file
        #[arg(long)]
        omega: Option<f64>,
        /// Largest time step between trajectory samples
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Scan the (phi1, phi2) landscape and refine the fastest optimum
    Landscape {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        scan: Scan,
        #[command(flatten)]
        common: Common,
    },
    /// Minimum-time design and a ready-to-simulate pulse
    Solve {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        scan: Scan,
        #[command(flatten)]
        common: Common,
    },
    /// GRAPE optimization over a grid of final times
    Grape {
        #[command(flatten)]
        problem: Problem,
        /// Single final time instead of a sweep
        #[arg(long, conflicts_with_all = ["tmin", "tmax"])]
        tfinal: Option<f64>,
        /// First swept time (default 0.9 of the analytic reference)
        #[arg(long)]
        tmin: Option<f64>,
        /// Last swept time (default 1.06 of the analytic reference)
        #[arg(long)]
        tmax: Option<f64>,
        /// Sweep spacing
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = selpulse::grape::DEFAULT_SEGMENTS)]
        segments: usize,
        #[arg(long, default_value_t = selpulse::grape::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = selpulse::grape::DEFAULT_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the verification suites
    Verify {
        /// Suite to run; repeat or comma-separate (default: all)
        #[arg(long, value_delimiter = ',')]
        suite: Vec<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Copy)]
struct Problem {
    #[arg(long)]
    omega: f64,
    #[arg(long, default_value = "excitation")]
    target: TransferTarget,
}

#[derive(Args, Clone, Copy)]
struct Scan {
    /// Grid points per angle
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Longest duration scanned (default depends on omega and target)
    #[arg(long)]
    tmax: Option<f64>,
    /// Integration step
    #[arg(long, default_value_t = selpulse::landscape::SCAN_STEP)]
    step: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate { pulse, omega, step, common } => commands::simulate(&pulse, omega, step, &common.out),
        Command::Landscape { problem, scan, common } => {
            commands::landscape(problem.omega, problem.target, scan_config(&problem, &scan, &common), &common.out)
        }
        Command::Solve { problem, scan, common } => {
            commands::solve(problem.omega, problem.target, scan_config(&problem, &scan, &common), &common.out)
        }
        Command::Grape { problem, tfinal, tmin, tmax, step, segments, restarts, iterations, seed, common } => {
            let mut p = selpulse::grape::GrapeProblem::new(problem.omega, problem.target, 1.0);
            p.n_segments = segments;
            p.restarts = restarts;
            p.max_iterations = iterations;
            p.seed = seed;
            p.workers = common.workers;
            commands::grape(p, commands::TimeGrid { single: tfinal, tmin, tmax, step }, &common.out)
        }
        Command::Verify { suite, seed, inject_fault, common } => {
            let opts = selpulse::verify::VerifyOptions { seed, inject_fault };
            commands::verify(&suite, &opts, &common.out)
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn scan_config(problem: &Problem, scan: &Scan, common: &Common) -> selpulse::landscape::ScanConfig {
    let t_max = scan.tmax.unwrap_or_else(|| selpulse::landscape::default_t_max(problem.target, problem.omega));
    let mut cfg = selpulse::landscape::ScanConfig::new(scan.grid, t_max);
    cfg.step = scan.step;
    cfg.workers = common.workers;
    cfg
}

impl From<selpulse::Error> for CliError {
    fn from(e: selpulse::Error) -> Self {
        use selpulse::Error as E;
        match e {
            E::Parse(m) => CliError::Parse(m),
            E::NotConverged(m) => CliError::NotConverged(m),
            E::NegativeDuration(_) | E::AmplitudeExceeded { .. } | E::NonFinite(_) | E::Domain(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}
