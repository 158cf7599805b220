//! Command line front end: four subcommands over one JSON config format.
//!
//! Exit codes: 0 success, 1 config error, 2 validation or precondition
//! failure, 3 numerical failure. Reports are deterministic for a fixed
//! config and seed; the wall time goes to stderr so it never perturbs the
//! output bytes.

mod commands;
mod config;
mod report;

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use commands::CliError;
use report::Report;

#[derive(Parser)]
#[command(
    name = "qest",
    version,
    about = "Numerical toolkit for one-parameter quantum channel estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choi matrix, its derivative, and channel structure residuals
    Choi(RunArgs),
    /// Channel Fisher information bounds and witnesses
    Fisher(RunArgs),
    /// Phase estimation risk bounds, tables, and probability curves
    Phase(RunArgs),
    /// Monte Carlo estimator simulation and diagnostics
    Simulate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Write the output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format, overriding the config's output block
    #[arg(long, value_parser = ["json", "csv"])]
    format: Option<String>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };

    if let Err(e) = apply_thread_cap() {
        eprintln!("qest: {e}");
        return e.exit_code();
    }

    let (name, args) = match &cli.command {
        Command::Choi(a) => ("choi", a),
        Command::Fisher(a) => ("fisher", a),
        Command::Phase(a) => ("phase", a),
        Command::Simulate(a) => ("simulate", a),
    };

    let start = Instant::now();
    match execute(name, args) {
        Ok(()) => {
            eprintln!(
                "qest: {name} finished in {:.3} s",
                start.elapsed().as_secs_f64()
            );
            0
        }
        Err(e) => {
            eprintln!("qest: {e}");
            e.exit_code()
        }
    }
}

/// QEST_THREADS caps the worker pool; unset means all cores.
fn apply_thread_cap() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("QEST_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| CliError::Config(format!("invalid QEST_THREADS value `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure the thread pool: {e}")))
}

fn execute(name: &str, args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = config::load_config(&args.config)?;
    let output = commands::run_command(name, &mut cfg)?;

    let format = args
        .format
        .clone()
        .or_else(|| cfg.output.as_ref().and_then(|o| o.format.clone()))
        .unwrap_or_else(|| "json".into());
    let text = match format.as_str() {
        "json" => {
            let report = Report {
                command: name.into(),
                config: serde_json::to_value(&cfg)
                    .map_err(|e| CliError::Config(format!("cannot echo the config: {e}")))?,
                results: output.results,
            };
            report::render_json(&report)
                .map_err(|e| CliError::Config(format!("cannot serialize the report: {e}")))?
        }
        "csv" => {
            let table = output.csv.ok_or_else(|| {
                CliError::Config(format!(
                    "`{name}` produced no tabular output for this config; use json"
                ))
            })?;
            report::render_csv(&table)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown output format `{other}` (expected json or csv)"
            )))
        }
    };

    let dest = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().and_then(|o| o.path.clone().map(PathBuf::from)));
    match dest {
        Some(path) => fs::write(&path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
