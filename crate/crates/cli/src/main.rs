//! `rfoc`: optimal-control RF pulse design from the command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 failed numerical check, 4 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfoc::config::{self, RunConfig};
use rfoc::runner;
use rfoc::Error;

#[derive(Parser)]
#[command(name = "rfoc", version, about = "Slice-selective RF pulse design by optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (overrides `workers`; 0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a pulse and write pulse, profile, iteration log and report.
    Design(Common),
    /// Simulate the pulse file given by `simulate.pulse`.
    Simulate(Common),
    /// Optimized versus conventional pulses over slice counts, or an alpha sweep.
    Compare(Common),
    /// Finite-difference check of gradient and Hessian on a small instance.
    CheckDerivatives(Common),
    /// List every configuration key with its default.
    Keys,
}

enum Failure {
    Input(String),
    Check(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut config = config::parse_config(&text).map_err(|e| match &common.config {
        Some(path) => Failure::Input(format!("{}: {e}", path.display())),
        None => Failure::Input(e.to_string()),
    })?;
    if let Some(w) = common.workers {
        config.workers = w;
    }
    Ok(config)
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn print_report(dir: &Path, report: &rfoc::metrics::DesignReport) {
    print!("{}", runner::format_report(report));
    println!("# artifacts in {}", dir.display());
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Keys => {
            print!("{}", config::reference());
        }
        Command::Design(common) => {
            init_logging(common.verbose);
            let config = load(&common)?;
            let outcome = runner::run_design(&config, &common.out)?;
            print_report(&common.out, &outcome.report);
        }
        Command::Simulate(common) => {
            init_logging(common.verbose);
            let config = load(&common)?;
            let report = runner::run_simulate(&config, &common.out)?;
            print_report(&common.out, &report);
        }
        Command::Compare(common) => {
            init_logging(common.verbose);
            let config = load(&common)?;
            let comparison = runner::run_compare(&config, &common.out)?;
            print!("{}", comparison.table);
        }
        Command::CheckDerivatives(common) => {
            init_logging(common.verbose);
            let config = load(&common)?;
            let check = runner::run_check_derivatives(&config)?;
            print!("{}", check.render());
            if !check.passed(1e-5) {
                return Err(Failure::Check("derivative check exceeds 1e-5".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (code, message) = match failure {
                Failure::Input(m) => (2, m),
                Failure::Check(m) => (3, m),
                Failure::Io(m) => (4, m),
            };
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
