//! `spikedet profile`: the hardware-metric arithmetic as a standalone step.

use clap::Args;
use spikedet_core::profiler::{
    build_report, format_report_table, PowerProfile, ReportRow, TimingProfile, TraceSummary,
};
use std::path::PathBuf;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct ProfileArgs {
    /// Power profile JSON (platform, static_w, dynamic_w).
    #[arg(long)]
    pub power: PathBuf,

    /// Measured seconds per simulation timestep.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Target inference rate (samples/s); inverted to obtain dt.
    #[arg(long)]
    pub rate: Option<f64>,

    /// Decode timesteps per inference.
    #[arg(long, default_value_t = 7)]
    pub timesteps: usize,

    /// Deployed layer count.
    #[arg(long)]
    pub layers: usize,

    /// Trace summary JSON from `run --trace`, for sparsity/SOPs fields.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Model label used in the printed table.
    #[arg(long, default_value = "model")]
    pub model: String,

    /// Write the report as JSON.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

pub fn run(args: ProfileArgs) -> CliResult<()> {
    let power: PowerProfile = serde_json::from_str(&super::read_string(&args.power)?)?;
    let timing = match (args.dt, args.rate) {
        (Some(dt), None) => TimingProfile::from_dt(dt, args.timesteps, args.layers),
        (None, Some(rate)) => TimingProfile::from_rate(rate, args.timesteps, args.layers),
        (Some(_), Some(_)) => {
            return Err(CliError::validation(anyhow::anyhow!(
                "--dt and --rate are mutually exclusive"
            )))
        }
        (None, None) => return Err(CliError::validation(anyhow::anyhow!("need --dt or --rate"))),
    }?;

    let mut report = build_report(&power, &timing, None)?;
    if let Some(path) = &args.trace {
        let summary: TraceSummary = serde_json::from_str(&super::read_string(path)?)?;
        report.sparsity = Some(summary.sparsity);
        report.sops = Some(summary.sops);
        report.active_synapse_fraction = summary.active_synapse_fraction;
    }

    print!(
        "{}",
        format_report_table(&[ReportRow::from_report(&args.model, &report)])
    );
    println!(
        "rate={:.2}/s  E_static={:.3}mJ  E_dynamic={:.3}mJ  dt={:.4}ms ({:?})",
        report.rate_hz,
        report.e_static_j * 1e3,
        report.e_dynamic_j * 1e3,
        report.timing.dt * 1e3,
        report.timing.dt_source,
    );
    if let (Some(s), Some(ops)) = (report.sparsity, report.sops) {
        println!("sparsity={s:.6}  SOPs={ops:.1}");
    }

    if let Some(path) = &args.out {
        super::write_file(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}
