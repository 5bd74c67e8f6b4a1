//! Command-line driver for `selfmap-core`: argument and config handling,
//! run records and output formats.

pub mod commands;
pub mod config;
mod error;
pub mod output;
pub mod record;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use selfmap_core::par::with_thread_count;
use selfmap_core::{Execution, ShootingControls};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use error::{exit, CliError};
use record::{Diagnostics, ResultItem, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "selfmap", version, about = "Shooting solver for equivariant harmonic self-maps of spheres")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: RunConfig,
    /// JSON or TOML file with the same keys as the flags, or a previous run record.
    #[arg(long, value_name = "PATH", global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Structural constants and closed-form bound checks.
    Constants,
    /// Largest admissible m1 for m0 = 2..5 compared with 4, 27, 60, 106.
    Table1,
    /// Integrate from the singular endpoint with slope --v.
    Shoot,
    /// Solve the boundary value problem for each --nodal number.
    Solve,
    /// Shoot over a slope grid.
    Sweep,
    /// Winding of the reflected profile for each --v.
    Omega,
    /// Limiting profile and, with --nodal, the limiting-configuration check.
    Limit,
    /// Solve and run the property suite on each solution.
    Verify,
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match run_cli(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("selfmap: {e}");
            e.exit_code()
        }
    }
}

fn run_cli(cli: Cli) -> Result<i32, CliError> {
    let file = match &cli.config {
        Some(path) => config::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = cli.opts.over(file).resolved();
    let controls = cfg.controls()?;
    let threads = cfg.threads_checked()?;
    let items = with_thread_count(threads, || commands::execute(cli.command, &cfg, &controls))?;
    let rec = assemble(cli.command, cfg, controls, items);
    for item in &rec.results {
        eprintln!("{}", summary_line(item));
    }
    if rec.diagnostics.degree_three_watchdog {
        eprintln!("selfmap: watchdog: a solution with |degree| = 3 was returned");
    }
    let bytes = match rec.config.format.unwrap_or_default() {
        config::Format::Json => output::to_json(&rec).map_err(|e| CliError::Usage(e.to_string()))?,
        config::Format::Csv => output::to_csv(&rec)?,
    };
    match &rec.config.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => match std::io::stdout().lock().write_all(&bytes) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        },
    }
    Ok(rec.diagnostics.exit_code)
}

/// Build the record and decide the exit code: domain errors first, then
/// numerical failures, then property violations.
pub fn assemble(command: Command, config: RunConfig, controls: ShootingControls, results: Vec<ResultItem>) -> RunRecord {
    let kinds: Vec<&str> = results.iter().filter_map(|r| r.error.as_ref().map(|e| e.kind)).collect();
    let violations: Vec<String> = results
        .iter()
        .flat_map(|r| r.violations().map(move |f| format!("{} v={:?}: {f}", r.pair, r.v)))
        .collect();
    let exit_code = if kinds.contains(&"domain") {
        exit::USAGE
    } else if !kinds.is_empty() {
        exit::NUMERICAL
    } else if !violations.is_empty() {
        exit::VIOLATION
    } else {
        exit::OK
    };
    let degree_three_watchdog = results.iter().any(|r| r.degree.is_some_and(|d| d.abs() == 3));
    RunRecord {
        command,
        config,
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
        controls,
        diagnostics: Diagnostics {
            exit_code,
            violations,
            errors: kinds.len(),
            degree_three_watchdog,
            parallel: Execution::Parallel.is_parallel(),
        },
        results,
    }
}

fn summary_line(r: &ResultItem) -> String {
    let mut s = format!("({},{})", r.pair.m0, r.pair.m1);
    if let Some(v) = r.v {
        s += &format!(" v={v:.12e}");
    }
    if let Some(f) = &r.fate {
        s += &format!(" {f}");
    }
    if let Some(n) = r.nodal {
        s += &format!(" nodal={n}");
    }
    if let Some(d) = r.degree {
        s += &format!(" degree={d}");
    }
    let bad: Vec<_> = r.violations().collect();
    if !bad.is_empty() {
        s += &format!(" VIOLATED {}", bad.join(","));
    }
    if let Some(e) = &r.error {
        s += &format!(" [{}] {}", e.kind, e.message);
    }
    s
}
