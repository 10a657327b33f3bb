use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use mmaas::harness::{self, Format, ReportError, RunError, ScenarioError};
use mmaas::mmapp::RunMode;

#[derive(Parser)]
#[command(name = "mmaas", version, about = "On-demand mobility management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mmaas,
    Legacy,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the logs and the report.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "mmaas")]
        mode: Mode,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario horizon, in ms.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: OutFormat,
    },
    /// Compare two JSON reports of the same scenario.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Engine(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Setup(m) => Failure::Invalid(m),
            e => Failure::Engine(e.to_string()),
        }
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::Invalid(e.to_string())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { scenario, mode, seed, until, out, format } => {
            let mut sc = harness::parse_scenario(&scenario)?;
            if let Some(seed) = seed {
                sc = sc.with_seed(seed);
            }
            if let Some(ms) = until {
                sc = sc.with_horizon_ms(ms)?;
            }
            let mode = match mode {
                Mode::Mmaas => RunMode::Mmaas,
                Mode::Legacy => RunMode::LegacyCentralized,
            };
            let (format, file) = match format {
                OutFormat::Csv => (Format::Csv, "report.csv"),
                OutFormat::Json => (Format::Json, "report.json"),
            };
            let result = harness::run(&sc, mode)?;
            result.logs.write_dir(&out).map_err(io)?;
            harness::emit(&result.report, format, &out.join(file))?;
            info!(
                "{} decisions, {:?} total, {:?} max",
                result.profile.decisions, result.profile.total, result.profile.max
            );
            println!(
                "{} {}: {} messages, {} transactions, report in {}",
                sc.name,
                mode.label(),
                result.report.controller_messages,
                result.report.transactions,
                out.join(file).display()
            );
        }
        Command::Compare { a, b, out } => {
            let summary = harness::compare(&harness::read_report(&a)?, &harness::read_report(&b)?)?;
            print!("{}", summary.to_text());
            if let Some(path) = out {
                std::fs::write(path, summary.to_json()).map_err(io)?;
            }
        }
        Command::Validate { scenario } => {
            let sc = harness::parse_scenario(&scenario)?;
            println!(
                "{}: ok ({} nodes, {} flows, {} ms, digest {})",
                sc.name,
                sc.nodes.len(),
                sc.flows.len(),
                sc.params.horizon_ms,
                sc.digest
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMAAS_LOG_LEVEL", "warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Engine(m)) => {
            eprintln!("engine assertion: {m}");
            ExitCode::from(2)
        }
    }
}
