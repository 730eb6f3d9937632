//! Anchor-free head decoding and detection scoring.
//!
//! The coupled head emits `N_cls + 4 * RegMax` channels per feature cell:
//! class logits first, then four distance distributions (left, top, right,
//! bottom) of `RegMax` bins each. A side's decoded distance is the softmax
//! expectation of its bins times the stride; boxes grow from the cell's
//! anchor center at `(idx + 0.5) * stride`. Accumulated output membranes are
//! treated directly as logits.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Output channels of the coupled head: `N_cls + 4 * RegMax`.
pub fn head_channels(n_cls: usize, reg_max: usize) -> usize {
    n_cls + 4 * reg_max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_cls: usize,
    pub reg_max: usize,
    /// Input-to-feature-map downsampling factor.
    pub stride: usize,
    pub score_threshold: f32,
    pub nms_iou_threshold: f32,
}

impl HeadConfig {
    /// Zero accumulated membranes decode to sigmoid scores of exactly 0.5, so
    /// the default threshold sits above that to keep silent nets silent.
    pub fn new(n_cls: usize, stride: usize) -> Self {
        Self {
            n_cls,
            reg_max: 5,
            stride,
            score_threshold: 0.6,
            nms_iou_threshold: 0.5,
        }
    }

    pub fn out_channels(&self) -> usize {
        head_channels(self.n_cls, self.reg_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn area(&self) -> f32 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x2 >= self.x1
            && self.y2 >= self.y1
            && [self.x1, self.y1, self.x2, self.y2]
                .iter()
                .all(|v| v.is_finite())
    }
}

/// Standard intersection-over-union; disjoint boxes score 0.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Softmax expectation of one side's bin logits: `sum_k k * softmax(z)_k`.
fn bin_expectation(logits: &[f32]) -> f32 {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut denom = 0.0f64;
    let mut num = 0.0f64;
    for (k, &z) in logits.iter().enumerate() {
        let e = ((z - max) as f64).exp();
        denom += e;
        num += k as f64 * e;
    }
    (num / denom) as f32
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes raw head output (`C_out x Hf x Wf` accumulated membranes) into
/// pre-NMS detections. Emits one detection per (cell, class) whose sigmoid
/// score clears the threshold.
pub fn decode(head: &Tensor, cfg: &HeadConfig) -> Result<Vec<Detection>> {
    let shape = head.shape();
    if shape.len() != 3 || shape[0] != cfg.out_channels() {
        return Err(Error::ShapeMismatch(format!(
            "head output {:?} does not provide {} channels",
            shape,
            cfg.out_channels()
        )));
    }
    let (hf, wf) = (shape[1], shape[2]);
    let stride = cfg.stride as f32;
    let mut dets = Vec::new();
    let mut bins = vec![0.0f32; cfg.reg_max];
    for i in 0..hf {
        for j in 0..wf {
            // sides in (l, t, r, b) order after the class channels
            let mut dist = [0.0f32; 4];
            for (side, d) in dist.iter_mut().enumerate() {
                for (k, bin) in bins.iter_mut().enumerate() {
                    *bin = head.get3(cfg.n_cls + side * cfg.reg_max + k, i, j);
                }
                *d = stride * bin_expectation(&bins);
            }
            let cx = (j as f32 + 0.5) * stride;
            let cy = (i as f32 + 0.5) * stride;
            let bbox = BBox {
                x1: cx - dist[0],
                y1: cy - dist[1],
                x2: cx + dist[2],
                y2: cy + dist[3],
            };
            for c in 0..cfg.n_cls {
                let score = sigmoid(head.get3(c, i, j));
                if score >= cfg.score_threshold {
                    dets.push(Detection {
                        bbox,
                        class_id: c,
                        score,
                    });
                }
            }
        }
    }
    Ok(dets)
}

/// Greedy per-class suppression by descending score: a detection survives iff
/// its IoU with every kept detection of the same class stays below the
/// threshold. Stable under score ties (input order breaks them).
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let cand = &dets[idx];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && iou(&k.bbox, &cand.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

/// COCO-style detection metrics plus the two F1 operating points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// mAP at IoU 0.5, 101-point interpolation, averaged over GT classes.
    pub map_50: f64,
    /// mAP averaged over IoU 0.5:0.05:0.95.
    pub map_50_95: f64,
    /// Headline F1 at IoU 0.5: the best value over the score sweep.
    pub f1_best: f64,
    /// Score threshold attaining `f1_best` (auditable operating point).
    pub f1_best_threshold: f64,
    /// F1 at IoU 0.5 with the configured score threshold applied.
    pub f1_at_configured: f64,
    pub configured_score_threshold: f64,
}

/// Evaluates per-image detections against per-image ground truth.
/// Matching is score-sorted greedy: each detection claims the unmatched
/// same-class ground-truth box of its image with the highest IoU at or above
/// the threshold. Classes without ground truth are excluded from the mAP
/// average.
pub fn eval_detections(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruth>],
    score_threshold: f64,
) -> Result<EvalMetrics> {
    let range: Vec<f64> = (0..10).map(|k| 0.5 + 0.05 * k as f64).collect();
    eval_detections_over_range(dets_per_image, gts_per_image, score_threshold, 0.5, &range)
}

/// [`eval_detections`] with explicit primary IoU threshold and averaging
/// range.
pub fn eval_detections_over_range(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruth>],
    score_threshold: f64,
    primary_iou: f64,
    iou_range: &[f64],
) -> Result<EvalMetrics> {
    if dets_per_image.len() != gts_per_image.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection images vs {} ground-truth images",
            dets_per_image.len(),
            gts_per_image.len()
        )));
    }
    if iou_range.is_empty() {
        return Err(Error::InvalidArgument("empty IoU range".into()));
    }
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = gts_per_image.iter().flatten().map(|g| g.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.is_empty() {
        return Ok(EvalMetrics {
            map_50: 0.0,
            map_50_95: 0.0,
            f1_best: 0.0,
            f1_best_threshold: 0.0,
            f1_at_configured: 0.0,
            configured_score_threshold: score_threshold,
        });
    }

    let ap_of = |class_id: usize, thr: f64| -> f64 {
        average_precision(dets_per_image, gts_per_image, class_id, thr)
    };

    #[cfg(feature = "parallel")]
    let per_class: Vec<(f64, f64)> = classes
        .par_iter()
        .map(|&c| {
            let ap50 = ap_of(c, primary_iou);
            let ap_mean =
                iou_range.iter().map(|&t| ap_of(c, t)).sum::<f64>() / iou_range.len() as f64;
            (ap50, ap_mean)
        })
        .collect();
    #[cfg(not(feature = "parallel"))]
    let per_class: Vec<(f64, f64)> = classes
        .iter()
        .map(|&c| {
            let ap50 = ap_of(c, primary_iou);
            let ap_mean =
                iou_range.iter().map(|&t| ap_of(c, t)).sum::<f64>() / iou_range.len() as f64;
            (ap50, ap_mean)
        })
        .collect();

    let n = per_class.len() as f64;
    let map_50 = per_class.iter().map(|p| p.0).sum::<f64>() / n;
    let map_50_95 = per_class.iter().map(|p| p.1).sum::<f64>() / n;

    let (f1_best, f1_best_threshold, f1_at_configured) =
        f1_sweep(dets_per_image, gts_per_image, primary_iou, score_threshold);

    Ok(EvalMetrics {
        map_50,
        map_50_95,
        f1_best,
        f1_best_threshold,
        f1_at_configured,
        configured_score_threshold: score_threshold,
    })
}

/// Score-sorted greedy matching of one class at one IoU threshold, reduced to
/// a 101-point interpolated AP.
fn average_precision(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruth>],
    class_id: usize,
    iou_thr: f64,
) -> f64 {
    let n_gt: usize = gts_per_image
        .iter()
        .map(|g| g.iter().filter(|x| x.class_id == class_id).count())
        .sum();
    if n_gt == 0 {
        return 0.0;
    }
    let tp_flags = match_greedy(dets_per_image, gts_per_image, Some(class_id), iou_thr);
    if tp_flags.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(tp_flags.len());
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = tp as f64 / n_gt as f64;
        points.push((recall, precision));
    }
    interpolated_ap_101(&points)
}

/// 101-point COCO interpolation: mean over recall levels 0.00..=1.00 of the
/// precision envelope (max precision among points with recall >= level).
fn interpolated_ap_101(points: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= level - 1e-12)
            .map(|(_, prec)| *prec)
            .fold(0.0f64, f64::max);
        sum += p;
    }
    sum / 101.0
}

/// Flattens detections (optionally one class), sorts by descending score, and
/// greedily matches each against the unmatched highest-IoU ground truth of
/// its image (and class). Returns the TP flag per detection in score order.
fn match_greedy(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruth>],
    class_filter: Option<usize>,
    iou_thr: f64,
) -> Vec<bool> {
    let mut flat: Vec<(usize, &Detection)> = Vec::new();
    for (img, dets) in dets_per_image.iter().enumerate() {
        for d in dets {
            if class_filter.is_none_or(|c| d.class_id == c) {
                flat.push((img, d));
            }
        }
    }
    flat.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut matched: Vec<Vec<bool>> = gts_per_image.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = Vec::with_capacity(flat.len());
    for (img, det) in flat {
        let gts = &gts_per_image[img];
        let mut best: Option<(usize, f32)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt.class_id != det.class_id || matched[img][gi] {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v as f64 >= iou_thr => {
                matched[img][gi] = true;
                flags.push(true);
            }
            _ => flags.push(false),
        }
    }
    flags
}

/// Sweeps the global (class-respecting) greedy matching at IoU 0.5 over every
/// score prefix. With G ground truths and a prefix of k detections holding TP
/// true positives, F1 = 2 TP / (G + k).
fn f1_sweep(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruth>],
    iou_thr: f64,
    configured_threshold: f64,
) -> (f64, f64, f64) {
    let n_gt: usize = gts_per_image.iter().map(|g| g.len()).sum();
    if n_gt == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mut scores: Vec<f64> = dets_per_image
        .iter()
        .flatten()
        .map(|d| d.score as f64)
        .collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let flags = match_greedy(dets_per_image, gts_per_image, None, iou_thr);

    let mut best = (0.0f64, 0.0f64);
    let mut configured = 0.0f64;
    let mut tp = 0usize;
    for (k, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let f1 = 2.0 * tp as f64 / (n_gt + k + 1) as f64;
        if f1 > best.0 {
            best = (f1, scores[k]);
        }
        // the last prefix whose score clears the threshold is the full
        // above-threshold detection set
        if scores[k] >= configured_threshold {
            configured = f1;
        }
    }
    (best.0, best.1, configured)
}

/// Parses YOLO-format ground truth ("class cx cy w h", normalized) into
/// pixel-space boxes at the given image size.
pub fn parse_yolo_ground_truth(text: &str, img_w: f32, img_h: f32) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "line {}: expected 'class cx cy w h', got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad class id", lineno + 1)))?;
        let nums: Vec<f32> = fields[1..]
            .iter()
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("line {}: bad number", lineno + 1)))?;
        let (cx, cy, w, h) = (
            nums[0] * img_w,
            nums[1] * img_h,
            nums[2] * img_w,
            nums[3] * img_h,
        );
        let bbox = BBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        };
        if !bbox.is_valid() {
            return Err(Error::Parse(format!("line {}: degenerate box", lineno + 1)));
        }
        out.push(GroundTruth { bbox, class_id });
    }
    Ok(out)
}

/// One detection per line: `image_id class score x1 y1 x2 y2`.
pub fn format_detection_line(image_id: &str, d: &Detection) -> String {
    format!(
        "{image_id} {} {:.6} {:.3} {:.3} {:.3} {:.3}",
        d.class_id, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
    )
}

pub fn parse_detection_line(line: &str) -> Result<(String, Detection)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(Error::Parse(format!(
            "expected 'image_id class score x1 y1 x2 y2', got {} fields",
            fields.len()
        )));
    }
    let class_id: usize = fields[1]
        .parse()
        .map_err(|_| Error::Parse("bad class id".into()))?;
    let nums: Vec<f32> = fields[2..]
        .iter()
        .map(|f| f.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse("bad number in detection line".into()))?;
    Ok((
        fields[0].to_string(),
        Detection {
            bbox: BBox {
                x1: nums[1],
                y1: nums[2],
                x2: nums[3],
                y2: nums[4],
            },
            class_id,
            score: nums[0],
        },
    ))
}
