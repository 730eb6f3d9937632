//! `spikedet`: encode event streams, run spiking inference, apply deployment
//! transforms, score detections, and profile energy/latency.
//!
//! Exit codes: 0 success, 1 validation failure (bad inputs, failed checks),
//! 2 runtime error.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spikedet", version, about)]
struct Cli {
    /// Seed recorded in outputs; fixes any randomized behavior.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run manifest (JSON) consumed by `run`; flags override its fields.
    #[arg(long, global = true)]
    manifest: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode an EVT1 event stream or an image into input tensors.
    Encode(commands::encode::EncodeArgs),
    /// Run inference: infer, decode, NMS; optionally trace and profile.
    Run(commands::run::RunArgs),
    /// Apply deployment transforms to a spec + weight set.
    Transform(commands::transform::TransformArgs),
    /// Score a detections file against YOLO-format ground truth.
    Eval(commands::eval::EvalArgs),
    /// Compute rate/energy/latency/EDP from power and timing inputs.
    Profile(commands::profile::ProfileArgs),
    /// Check every loss equation against a fixture of expected values.
    LossesCheck(commands::losses_check::LossesCheckArgs),
    /// Render saved profile reports as an aligned comparison table.
    Report(commands::report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = spikedet_core::configure_thread_pool(threads) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Encode(args) => commands::encode::run(args),
        Command::Run(args) => commands::run::run(args, cli.manifest.as_deref(), cli.seed),
        Command::Transform(args) => commands::transform::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Profile(args) => commands::profile::run(args),
        Command::LossesCheck(args) => commands::losses_check::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Failure classified for the exit-code contract.
#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    inner: anyhow::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad inputs or a failed check: exit 1.
    Validation,
    /// Unexpected failure mid-run: exit 2.
    Runtime,
}

impl CliError {
    pub fn validation(inner: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            inner: inner.into(),
        }
    }

    pub fn runtime(inner: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            inner: inner.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Runtime => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if f.alternate() {
            write!(f, "{:#}", self.inner)
        } else {
            write!(f, "{}", self.inner)
        }
    }
}

impl From<spikedet_core::Error> for CliError {
    fn from(e: spikedet_core::Error) -> Self {
        match e {
            spikedet_core::Error::Io(_) => Self::runtime(e),
            _ => Self::validation(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
