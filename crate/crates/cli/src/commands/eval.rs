//! `spikedet eval`: score a detections file against YOLO ground truth.

use clap::Args;
use spikedet_core::detect::{
    eval_detections_over_range, parse_detection_line, parse_yolo_ground_truth, Detection,
    GroundTruth,
};
use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Detections file: one `image_id class score x1 y1 x2 y2` per line.
    #[arg(long)]
    pub detections: PathBuf,

    /// Directory of YOLO-format `<image_id>.txt` ground-truth files.
    #[arg(long)]
    pub ground_truth: PathBuf,

    /// Image width the normalized ground truth denormalizes to.
    #[arg(long, default_value_t = 256)]
    pub width: usize,

    /// Image height the normalized ground truth denormalizes to.
    #[arg(long, default_value_t = 192)]
    pub height: usize,

    /// Primary IoU threshold for mAP@IoU and F1.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,

    /// Averaging range `start:stop:step` for the strict mAP.
    #[arg(long, default_value = "0.5:0.95:0.05")]
    pub range: String,

    /// Configured score threshold of the secondary F1 operating point.
    #[arg(long, default_value_t = 0.6)]
    pub score_threshold: f64,

    /// Also write the metrics as JSON.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

fn parse_range(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::validation(anyhow::anyhow!(
            "range must be start:stop:step, got '{s}'"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::validation(anyhow::anyhow!("bad number in range '{s}'")))?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || stop < start {
        return Err(CliError::validation(anyhow::anyhow!(
            "degenerate range '{s}'"
        )));
    }
    let mut out = Vec::new();
    let mut v = start;
    while v <= stop + 1e-9 {
        out.push(v);
        v += step;
    }
    Ok(out)
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let range = parse_range(&args.range)?;

    // group detections by image id
    let mut by_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (lineno, line) in super::read_string(&args.detections)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, det) = parse_detection_line(line).map_err(|e| {
            CliError::validation(anyhow::anyhow!(
                "{} line {}: {e}",
                args.detections.display(),
                lineno + 1
            ))
        })?;
        by_image.entry(id).or_default().push(det);
    }

    // every ground-truth file defines an image; detections without GT files
    // still count (as pure false positives) via an empty GT list
    let mut images: BTreeMap<String, (Vec<Detection>, Vec<GroundTruth>)> = BTreeMap::new();
    for entry in std::fs::read_dir(&args.ground_truth)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let gts = parse_yolo_ground_truth(
            &super::read_string(&path)?,
            args.width as f32,
            args.height as f32,
        )
        .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))?;
        images.entry(id).or_default().1 = gts;
    }
    for (id, dets) in by_image {
        images.entry(id).or_default().0 = dets;
    }
    if images.is_empty() {
        return Err(CliError::validation(anyhow::anyhow!(
            "no ground-truth files in {}",
            args.ground_truth.display()
        )));
    }

    let (dets, gts): (Vec<_>, Vec<_>) = images.into_values().unzip();
    let metrics = eval_detections_over_range(&dets, &gts, args.score_threshold, args.iou, &range)?;

    println!("mAP@{:.2}       {:.4}", args.iou, metrics.map_50);
    println!(
        "mAP@{:.2}:{:.2}  {:.4}",
        range.first().unwrap(),
        range.last().unwrap(),
        metrics.map_50_95
    );
    println!(
        "F1 (best)     {:.4} at score >= {:.4}",
        metrics.f1_best, metrics.f1_best_threshold
    );
    println!(
        "F1 (configured {:.2}) {:.4}",
        metrics.configured_score_threshold, metrics.f1_at_configured
    );

    if let Some(path) = &args.out {
        super::write_file(path, serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    }
    Ok(())
}
