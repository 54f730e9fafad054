//! `ldips`: synthesize, check, evaluate, repair and simulate action-selection
//! policies.
//!
//! Exit codes: 0 ok, 1 usage or I/O, 2 unsatisfiable, 3 capacity exceeded,
//! 4 validation failure.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use report::RunReport;

#[derive(Debug, Parser)]
#[command(
    name = "ldips",
    version,
    about = "Policy synthesis from demonstrations"
)]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Signature equality tolerance for feature enumeration.
    #[arg(long, global = true, default_value_t = ldips::enumerate::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Feature expression height and predicate size bound.
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    /// Write the run report here instead of stderr.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a policy (or complete a sketch) from demonstrations.
    Synth {
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        sketch: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Type-check a policy and verify it against demonstrations.
    Check {
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        demos: PathBuf,
    },
    /// Print the action a policy chooses for each record of a demo file.
    Eval {
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        demos: PathBuf,
    },
    /// Count enumerated features per pruning mode as CSV.
    EnumStats {
        #[command(flatten)]
        domain: DomainArg,
        /// Worlds used for signatures; none gives an empty example set.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Pruning modes to report; all four by default.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<ldips::enumerate::PruningMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjust policy thresholds to classify corrections correctly.
    Repair {
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        corrections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Adjustment CSV path; printed to stdout when absent.
        #[arg(long)]
        adjustments: Option<PathBuf>,
    },
    /// Score a policy in the simulator over a grid of ball starts.
    Simulate {
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Per-cell CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write corrections for failed episodes here.
        #[arg(long)]
        corrections: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        max_corrections: usize,
    },
    /// Record demonstrations by running a policy in the simulator.
    Record {
        #[command(flatten)]
        domain: DomainArg,
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Keep every n-th step.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Check { .. } => "check",
            Command::Eval { .. } => "eval",
            Command::EnumStats { .. } => "enum-stats",
            Command::Repair { .. } => "repair",
            Command::Simulate { .. } => "simulate",
            Command::Record { .. } => "record",
        }
    }
}

#[derive(Debug, Args)]
struct DomainArg {
    #[arg(long)]
    domain: PathBuf,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Start grid as COLSxROWS.
    #[arg(long, default_value = "20x15", value_parser = commands::parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Physics scale factors such as friction=1.5 or accel=0.8.
    #[arg(long, num_args = 1..)]
    perturb: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                let mut r = RunReport::new("", 0);
                r.outcome = report::Outcome {
                    status: "usage",
                    exit_code: 1,
                    message: Some(e.kind().to_string()),
                };
                eprintln!("{}", r.to_json());
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let mut report = RunReport::new(cli.command.name(), jobs);
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .map_err(|e| Failure::usage(e.into()))
        .and_then(|_| commands::run(&cli, &mut report));
    let code = match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            report.outcome = report::Outcome {
                status: f.status(),
                exit_code: f.code,
                message: Some(format!("{:#}", f.error)),
            };
            f.code
        }
    };
    match &cli.report {
        Some(path) => {
            if let Err(e) = std::fs::write(path, report.to_json() + "\n") {
                eprintln!("error: cannot write report {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => eprintln!("{}", report.to_json()),
    }
    ExitCode::from(code)
}
