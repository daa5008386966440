mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfg_planning::Error;

use crate::commands::Outcome;
use crate::config::RunConfig;

/// Monotone planning problems: master-equation solves, penalization
/// continuation and diagnostics.
#[derive(Parser, Debug)]
#[command(name = "mfgplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `[run] out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for every sampled diagnostic (overrides `[run] seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One penalized solve at the first eps of the schedule.
    Solve,
    /// Penalization continuation and limit extraction.
    Plan,
    /// Yosida approximation of a solve, by resolvent and by transport.
    Yosida,
    /// Optimal trajectories from the planned solution.
    Traject,
    /// Half-space problem in log coordinates.
    Halfspace,
    /// Run every diagnostic and write a pass/fail report.
    Verify,
    /// Compare the grid solution with characteristics at one point.
    Probe {
        #[arg(long)]
        t: Option<f64>,
        /// Comma-separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        1
    } else if e.is_io() {
        3
    } else {
        2
    }
}

fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(Outcome, PathBuf), Error> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = match &cli.command {
        Command::Solve => commands::cmd_solve(&cfg, seed),
        Command::Plan => commands::cmd_plan(&cfg, seed),
        Command::Yosida => commands::cmd_yosida(&cfg, seed),
        Command::Traject => commands::cmd_traject(&cfg, seed),
        Command::Halfspace => commands::cmd_halfspace(&cfg, seed),
        Command::Verify => commands::cmd_verify(&cfg, seed),
        Command::Probe { t, x } => commands::cmd_probe(&cfg, seed, *t, x.clone()),
    }?;
    Ok((outcome, out_dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (outcome, dir) = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Err(e) = write_outputs(&dir, &outcome.files) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(3);
    }
    if !cli.quiet {
        for line in &outcome.summary {
            println!("{line}");
        }
        println!("wrote {} files to {}", outcome.files.len(), dir.display());
    }
    if let Some(e) = &outcome.error {
        eprintln!("error: {e} (partial results written)");
        return ExitCode::from(exit_code(e));
    }
    if outcome.failed_checks > 0 {
        eprintln!("{} checks failed", outcome.failed_checks);
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
