//! `spikedet transform`: deployment rewrites with an equivalence report.

use clap::Args;
use spikedet_core::model::weights::{read_weight_set, write_weight_set};
use spikedet_core::model::{Network, NetworkSpec};
use spikedet_core::transform::{apply_transforms, TransformOptions};
use std::path::PathBuf;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct TransformArgs {
    /// Input spec JSON.
    pub in_spec: PathBuf,
    /// Input SNNW weight set.
    pub in_weights: PathBuf,

    /// Output paths: spec JSON then SNNW weights.
    #[arg(long, short = 'o', num_args = 2, value_names = ["OUT_SPEC", "OUT_WEIGHTS"])]
    pub out: Vec<PathBuf>,

    /// Fuse RepVGG blocks into single 3x3 convs.
    #[arg(long)]
    pub reparam: bool,

    /// Absorb BatchNorm variance into conv weights (mean-only BN remains).
    #[arg(long)]
    pub absorb_bn: bool,

    /// Clamp mean-only BN means to the deployable range.
    #[arg(long)]
    pub clamp: bool,

    /// Quantize conv weights ("int8" is the only supported width).
    #[arg(long)]
    pub quantize: Option<String>,

    /// Random probes per rewritten layer for the equivalence report.
    #[arg(long, default_value_t = 5)]
    pub probes: usize,

    /// Probe seed.
    #[arg(long, default_value_t = 7)]
    pub probe_seed: u64,

    /// Also write the equivalence report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(args: TransformArgs) -> CliResult<()> {
    if args.out.len() != 2 {
        return Err(CliError::validation(anyhow::anyhow!(
            "-o takes exactly two paths: out.spec out.snnw"
        )));
    }
    let quantize_int8 = match args.quantize.as_deref() {
        None => false,
        Some("int8") => true,
        Some(other) => {
            return Err(CliError::validation(anyhow::anyhow!(
                "unsupported quantization width '{other}' (try int8)"
            )))
        }
    };
    let opts = TransformOptions {
        reparam: args.reparam,
        absorb_bn: args.absorb_bn,
        clamp: args.clamp,
        quantize_int8,
    };

    let spec = NetworkSpec::from_json(&super::read_string(&args.in_spec)?)
        .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", args.in_spec.display())))?;
    let weights = read_weight_set(&super::read_bytes(&args.in_weights)?)
        .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", args.in_weights.display())))?;
    let net = Network::new(spec, weights)?;

    let (out_net, report) = apply_transforms(&net, opts, args.probes, args.probe_seed)?;

    super::write_file(&args.out[0], out_net.spec.to_json()?.as_bytes())?;
    super::write_file(&args.out[1], &write_weight_set(&out_net.weights)?)?;

    println!(
        "stages: {}",
        if report.stages.is_empty() {
            "none".to_string()
        } else {
            report.stages.join(" -> ")
        }
    );
    if report.quantized_tensors > 0 {
        println!(
            "quantized {} weight tensors to int8",
            report.quantized_tensors
        );
    }
    if !report.layer_equivalence.is_empty() {
        println!(
            "{:<8} {:<12} {:>14} {:>14}",
            "layer", "stage", "max abs err", "max rel err"
        );
        for e in &report.layer_equivalence {
            println!(
                "{:<8} {:<12} {:>14.3e} {:>14.3e}",
                e.original_layer, e.stage, e.max_abs_error, e.max_rel_error
            );
        }
    }
    if let Some(path) = &args.report {
        super::write_file(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}
