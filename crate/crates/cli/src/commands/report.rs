//! `spikedet report`: renders saved profile reports side by side.

use clap::Args;
use spikedet_core::profiler::{format_report_table, ProfileReport, ReportRow};
use std::path::PathBuf;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct ReportArgs {
    /// Report JSON files from `run --power` or `profile -o`. Rows are
    /// labeled `name=path`, or by file stem when the label is omitted.
    #[arg(required = true)]
    pub reports: Vec<String>,
}

pub fn run(args: ReportArgs) -> CliResult<()> {
    let mut rows = Vec::new();
    for arg in &args.reports {
        let (label, path) = match arg.split_once('=') {
            Some((label, path)) => (label.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(arg);
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| arg.clone());
                (label, path)
            }
        };
        let report: ProfileReport = serde_json::from_str(&super::read_string(&path)?)
            .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))?;
        rows.push(ReportRow::from_report(&label, &report));
    }
    print!("{}", format_report_table(&rows));
    Ok(())
}
