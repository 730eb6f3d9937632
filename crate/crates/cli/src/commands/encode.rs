//! `spikedet encode`: event stream / image to input tensors.

use clap::{Args, ValueEnum};
use spikedet_core::event;
use spikedet_core::model::weights::{write_weight_set, WeightSet};
use spikedet_core::tensor::Tensor;
use std::path::PathBuf;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Histogram,
    Voxel,
    Frame,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// EVT1 stream (histogram/voxel) or image file (frame).
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, value_enum, default_value = "histogram")]
    pub mode: Mode,

    /// Temporal bins for voxel encoding.
    #[arg(long, default_value_t = 3)]
    pub bins: usize,

    /// Signed voxel accumulation (+1 positive, -1 negative polarity).
    #[arg(long)]
    pub signed_polarity: bool,

    /// Slice long streams into fixed windows of this many milliseconds.
    #[arg(long, default_value_t = 100)]
    pub window_ms: u64,

    /// Treat frame input as single-channel grayscale.
    #[arg(long)]
    pub gray: bool,

    /// Output directory for the tensor files.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

pub fn run(args: EncodeArgs) -> CliResult<()> {
    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());

    match args.mode {
        Mode::Frame => {
            let img = image::open(&args.input).map_err(|e| {
                CliError::validation(anyhow::anyhow!(
                    "cannot decode image {}: {e}",
                    args.input.display()
                ))
            })?;
            let tensor = if args.gray {
                let g = img.to_luma8();
                event::normalize_frame(g.as_raw(), g.height() as usize, g.width() as usize, 1)?
            } else {
                let rgb = img.to_rgb8();
                event::normalize_frame(
                    rgb.as_raw(),
                    rgb.height() as usize,
                    rgb.width() as usize,
                    3,
                )?
            };
            let path = args.out.join(format!("{stem}.tns"));
            write_tensor(&path, &tensor)?;
            println!(
                "frame {} -> {} shape={:?} min={:.4} max={:.4}",
                args.input.display(),
                path.display(),
                tensor.shape(),
                tensor
                    .as_f32()?
                    .iter()
                    .cloned()
                    .fold(f32::INFINITY, f32::min),
                tensor.as_f32()?.iter().cloned().fold(0.0f32, f32::max),
            );
        }
        Mode::Histogram | Mode::Voxel => {
            let bytes = super::read_bytes(&args.input)?;
            let stream = event::parse_events(&bytes).map_err(|e| {
                CliError::validation(anyhow::anyhow!("{}: {e}", args.input.display()))
            })?;
            let windows = stream.slice(args.window_ms * 1000)?;
            let mut total_events = 0usize;
            let mut total_mass = 0.0f64;
            for (k, window) in windows.iter().enumerate() {
                let tensor = match args.mode {
                    Mode::Histogram => event::encode_histogram(window),
                    Mode::Voxel => event::encode_voxel(window, args.bins, args.signed_polarity)?,
                    Mode::Frame => unreachable!(),
                };
                total_events += window.len();
                total_mass += tensor.sum();
                let path = args.out.join(format!("{stem}_{k:04}.tns"));
                write_tensor(&path, &tensor)?;
            }
            // unsigned encodings conserve mass: tensor sum == event count
            println!(
                "windows={} events={} tensor_mass={:.6}",
                windows.len(),
                total_events,
                total_mass
            );
        }
    }
    Ok(())
}

fn write_tensor(path: &std::path::Path, tensor: &Tensor) -> CliResult<()> {
    let bytes = write_weight_set(&WeightSet::new(vec![tensor.clone()]))?;
    super::write_file(path, &bytes)
}
