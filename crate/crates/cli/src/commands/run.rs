//! `spikedet run`: the full pipeline for one input tensor.

use clap::Args;
use spikedet_core::detect::{self, HeadConfig};
use spikedet_core::model::weights::read_weight_set;
use spikedet_core::model::{validate_spec, Network, NetworkSpec};
use spikedet_core::profiler::{self, PowerProfile, TimingProfile, TraceSummary};
use spikedet_core::runtime;
use std::path::{Path, PathBuf};

use crate::manifest::{HeadSettings, ProfileSettings, RunManifest};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct RunArgs {
    /// Network spec JSON (overrides the manifest).
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// SNNW weight set (overrides the manifest).
    #[arg(long)]
    pub weights: Option<PathBuf>,

    /// Input tensor (.tns) or raw EVT1 stream (overrides the manifest).
    #[arg(long)]
    pub input: Option<PathBuf>,

    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Object classes predicted by the head.
    #[arg(long)]
    pub classes: Option<usize>,

    #[arg(long)]
    pub reg_max: Option<usize>,

    #[arg(long)]
    pub score_threshold: Option<f32>,

    #[arg(long)]
    pub nms_iou: Option<f32>,

    #[arg(long)]
    pub timesteps: Option<usize>,

    #[arg(long)]
    pub reset_interval: Option<usize>,

    #[arg(long)]
    pub tau: Option<f32>,

    /// Record spike counts and write trace.json.
    #[arg(long)]
    pub trace: bool,

    /// Power profile JSON; with --rate or --dt, writes report.json.
    #[arg(long)]
    pub power: Option<PathBuf>,

    /// Samples/s used to infer the per-step time.
    #[arg(long)]
    pub rate: Option<f64>,

    /// Measured seconds per timestep.
    #[arg(long)]
    pub dt: Option<f64>,
}

/// Flags override manifest fields; a manifest is required only for fields
/// with no flag value.
fn resolve(args: RunArgs, manifest_path: Option<&Path>, seed: u64) -> CliResult<RunManifest> {
    let base: Option<RunManifest> = match manifest_path {
        Some(p) => Some(serde_json::from_str(&super::read_string(p)?)?),
        None => None,
    };
    let pick = |flag: Option<PathBuf>, from_manifest: Option<PathBuf>, name: &str| {
        flag.or(from_manifest).ok_or_else(|| {
            CliError::validation(anyhow::anyhow!(
                "--{name} required (no manifest supplies it)"
            ))
        })
    };
    let (m_spec, m_weights, m_input, m_out, m_run, m_head, m_trace, m_profile, m_seed) = match base
    {
        Some(m) => (
            Some(m.spec),
            Some(m.weights),
            Some(m.input),
            Some(m.out_dir),
            m.run,
            Some(m.head),
            m.trace,
            m.profile,
            m.seed,
        ),
        None => (
            None,
            None,
            None,
            None,
            runtime::RunConfig::default(),
            None,
            false,
            None,
            0,
        ),
    };

    let mut run = m_run;
    if let Some(t) = args.timesteps {
        run.t_steps = t;
    }
    if let Some(r) = args.reset_interval {
        run.reset_interval = r;
    }
    if let Some(tau) = args.tau {
        run.tau = tau;
    }

    let head = match (args.classes, m_head) {
        (Some(classes), prev) => {
            let mut h = prev.unwrap_or(HeadSettings {
                classes,
                reg_max: 5,
                score_threshold: 0.6,
                nms_iou: 0.5,
            });
            h.classes = classes;
            h
        }
        (None, Some(h)) => h,
        (None, None) => {
            return Err(CliError::validation(anyhow::anyhow!(
                "--classes required (no manifest supplies it)"
            )))
        }
    };
    let mut head = head;
    if let Some(r) = args.reg_max {
        head.reg_max = r;
    }
    if let Some(s) = args.score_threshold {
        head.score_threshold = s;
    }
    if let Some(n) = args.nms_iou {
        head.nms_iou = n;
    }

    let profile = match (&args.power, m_profile) {
        (Some(power), _) => Some(ProfileSettings {
            power: power.clone(),
            dt: args.dt,
            rate: args.rate,
        }),
        (None, Some(mut p)) => {
            if args.dt.is_some() || args.rate.is_some() {
                p.dt = args.dt;
                p.rate = args.rate;
            }
            Some(p)
        }
        (None, None) => None,
    };

    Ok(RunManifest {
        spec: pick(args.spec, m_spec, "spec")?,
        weights: pick(args.weights, m_weights, "weights")?,
        input: pick(args.input, m_input, "input")?,
        out_dir: pick(args.out_dir, m_out, "out-dir")?,
        seed: if seed != 0 { seed } else { m_seed },
        run,
        head,
        trace: args.trace || m_trace,
        profile,
    })
}

pub fn run(args: RunArgs, manifest_path: Option<&Path>, seed: u64) -> CliResult<()> {
    let m = resolve(args, manifest_path, seed)?;

    let spec = NetworkSpec::from_json(&super::read_string(&m.spec)?)
        .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", m.spec.display())))?;
    let report = validate_spec(&spec, spec.input_shape);
    if !report.is_valid() {
        return Err(CliError::validation(anyhow::anyhow!(
            "spec validation failed: {}",
            report.violations.join("; ")
        )));
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let weights = read_weight_set(&super::read_bytes(&m.weights)?)
        .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", m.weights.display())))?;
    let net = Network::new(spec, weights)?;

    let input = super::load_input_tensor(&m.input)?;
    let image_id = m
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());

    // head geometry from the network itself
    let shapes = net.spec.layer_shapes(net.spec.input_shape)?;
    let out_shape = *shapes
        .last()
        .ok_or_else(|| CliError::validation(anyhow::anyhow!("network has no layers")))?;
    let stride_h = net.spec.input_shape[1] / out_shape[1];
    let stride_w = net.spec.input_shape[2] / out_shape[2];
    if stride_h != stride_w {
        return Err(CliError::validation(anyhow::anyhow!(
            "anisotropic head stride {stride_h}x{stride_w} is not supported"
        )));
    }
    let head_cfg = HeadConfig {
        n_cls: m.head.classes,
        reg_max: m.head.reg_max,
        stride: stride_h,
        score_threshold: m.head.score_threshold,
        nms_iou_threshold: m.head.nms_iou,
    };
    if head_cfg.out_channels() != out_shape[0] {
        return Err(CliError::validation(anyhow::anyhow!(
            "head expects {} output channels ({} classes + 4*{} bins), network emits {}",
            head_cfg.out_channels(),
            m.head.classes,
            m.head.reg_max,
            out_shape[0]
        )));
    }

    // infer stage (with or without tracing)
    let (raw, trace) = if m.trace {
        let (mut outputs, trace) =
            runtime::record_trace(&net, std::slice::from_ref(&input), &m.run)
                .map_err(|e| CliError::validation(anyhow::anyhow!("infer stage: {e}")))?;
        (outputs.remove(0), Some(trace))
    } else {
        let out = runtime::infer(&net, &input, &m.run)
            .map_err(|e| CliError::validation(anyhow::anyhow!("infer stage: {e}")))?;
        (out, None)
    };

    // decode stage
    let dets = detect::decode(&raw, &head_cfg)
        .map_err(|e| CliError::validation(anyhow::anyhow!("decode stage: {e}")))?;
    let kept = detect::nms(&dets, head_cfg.nms_iou_threshold);

    let mut lines = String::new();
    for d in &kept {
        lines.push_str(&detect::format_detection_line(&image_id, d));
        lines.push('\n');
    }
    super::write_file(&m.out_dir.join("detections.txt"), lines.as_bytes())?;
    println!(
        "detections: {} raw, {} after nms -> {}",
        dets.len(),
        kept.len(),
        m.out_dir.join("detections.txt").display()
    );

    if let Some(trace) = &trace {
        let summary = TraceSummary::from_trace(trace)
            .map_err(|e| CliError::validation(anyhow::anyhow!("trace stage: {e}")))?;
        let path = m.out_dir.join("trace.json");
        super::write_file(&path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
        println!(
            "trace: sparsity={:.6} sops={:.1} -> {}",
            summary.sparsity,
            summary.sops,
            path.display()
        );
    }

    if let Some(p) = &m.profile {
        let power: PowerProfile = serde_json::from_str(&super::read_string(&p.power)?)?;
        let n_layers = net.spec.deployed_layer_count();
        let timing = match (p.dt, p.rate) {
            (Some(dt), _) => TimingProfile::from_dt(dt, m.run.t_steps, n_layers),
            (None, Some(rate)) => TimingProfile::from_rate(rate, m.run.t_steps, n_layers),
            (None, None) => {
                return Err(CliError::validation(anyhow::anyhow!(
                    "profiling needs --dt or --rate"
                )))
            }
        }
        .map_err(|e| CliError::validation(anyhow::anyhow!("profile stage: {e}")))?;
        let report = profiler::build_report(&power, &timing, trace.as_ref())
            .map_err(|e| CliError::validation(anyhow::anyhow!("profile stage: {e}")))?;
        let path = m.out_dir.join("report.json");
        super::write_file(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
        let row = profiler::ReportRow::from_report(&net.spec.name, &report);
        print!("{}", profiler::format_report_table(&[row]));
    }

    // record the resolved manifest next to the outputs for reproducibility
    super::write_file(
        &m.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&m)?.as_bytes(),
    )?;
    Ok(())
}
