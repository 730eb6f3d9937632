//! Forward-value computations of the detection and distillation losses.
//!
//! Everything here is f64 and gradient-free: the point is to pin each formula
//! numerically. Box regression uses the complete-IoU penalty, box-side
//! regression the distribution focal loss over discrete bins, classification
//! a summed binary cross-entropy with logits. Distillation couples
//! temperature-softened distributions through a teacher-weighted KL
//! divergence, with an MSE feature alignment over the temporal mean of
//! projected student maps.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probability floor applied inside KL terms to avoid log(0).
pub const KL_FLOOR: f64 = 1e-12;

/// Loss balance and distillation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Softmax temperature.
    pub tp: f64,
    /// Box-loss weight.
    pub alpha: f64,
    /// Classification-loss weight.
    pub beta: f64,
    /// DFL weight.
    pub gamma: f64,
    /// Scheduled weight shared by both logit-distillation terms.
    pub theta: f64,
    /// Scheduled feature-distillation weight.
    pub eta: f64,
    /// Student timesteps (temporal mean length in feature alignment).
    pub t_steps: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tp: 20.0,
            alpha: 6.0,
            beta: 0.5,
            gamma: 1.5,
            theta: 1.0,
            eta: 1.0,
            t_steps: 7,
        }
    }
}

/// Temperature softmax over one logit row, log-sum-exp stabilized.
pub fn softmax_t(logits: &[f64], tp: f64) -> Result<Vec<f64>> {
    if tp <= 0.0 {
        return Err(Error::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / tp).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / denom).collect())
}

/// Teacher-weighted KL divergence over M rows of K-way distributions:
/// `(1/M) sum_i sum_j p_t[i,j] ln(p_t[i,j] / p_s[i,j])`, probabilities
/// floored at [`KL_FLOOR`].
pub fn kl_div(p_s: &[Vec<f64>], p_t: &[Vec<f64>]) -> Result<f64> {
    if p_s.len() != p_t.len() || p_s.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} student rows vs {} teacher rows",
            p_s.len(),
            p_t.len()
        )));
    }
    let mut total = 0.0;
    for (i, (s_row, t_row)) in p_s.iter().zip(p_t).enumerate() {
        if s_row.len() != t_row.len() {
            return Err(Error::ShapeMismatch(format!("row {i}: K differs")));
        }
        for (name, row) in [("student", s_row), ("teacher", t_row)] {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: {name} distribution sums to {sum}"
                )));
            }
        }
        for (&ps, &pt) in s_row.iter().zip(t_row) {
            let pt = pt.max(KL_FLOOR);
            let ps = ps.max(KL_FLOOR);
            if pt > KL_FLOOR {
                total += pt * (pt / ps).ln();
            }
        }
    }
    Ok(total / p_s.len() as f64)
}

/// Binary cross-entropy with logits, sum reduction over all elements.
/// Stable form: `max(x, 0) - x y + ln(1 + e^{-|x|})`.
pub fn bce_logits(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch("row counts differ".into()));
    }
    let mut total = 0.0;
    for (i, (xr, yr)) in x.iter().zip(y).enumerate() {
        if xr.len() != yr.len() {
            return Err(Error::ShapeMismatch(format!("row {i}: lengths differ")));
        }
        for (&xv, &yv) in xr.iter().zip(yr) {
            if yv != 0.0 && yv != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: target {yv} is not binary"
                )));
            }
            total += xv.max(0.0) - xv * yv + (-xv.abs()).exp().ln_1p();
        }
    }
    Ok(total)
}

/// Complete IoU of two `[x1, y1, x2, y2]` boxes: IoU minus the normalized
/// center-distance penalty minus the aspect-ratio penalty.
pub fn ciou(pred: [f64; 4], target: [f64; 4]) -> f64 {
    let area = |b: &[f64; 4]| (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let ix = (pred[2].min(target[2]) - pred[0].max(target[0])).max(0.0);
    let iy = (pred[3].min(target[3]) - pred[1].max(target[1])).max(0.0);
    let inter = ix * iy;
    let union = area(&pred) + area(&target) - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };

    let cx_p = (pred[0] + pred[2]) / 2.0;
    let cy_p = (pred[1] + pred[3]) / 2.0;
    let cx_t = (target[0] + target[2]) / 2.0;
    let cy_t = (target[1] + target[3]) / 2.0;
    let rho2 = (cx_p - cx_t).powi(2) + (cy_p - cy_t).powi(2);

    let ex1 = pred[0].min(target[0]);
    let ey1 = pred[1].min(target[1]);
    let ex2 = pred[2].max(target[2]);
    let ey2 = pred[3].max(target[3]);
    let c2 = (ex2 - ex1).powi(2) + (ey2 - ey1).powi(2);
    let center_penalty = if c2 > 0.0 { rho2 / c2 } else { 0.0 };

    let wt = target[2] - target[0];
    let ht = target[3] - target[1];
    let wp = pred[2] - pred[0];
    let hp = pred[3] - pred[1];
    let v =
        4.0 / (std::f64::consts::PI * std::f64::consts::PI) * (wt.atan2(ht) - wp.atan2(hp)).powi(2);
    let alpha = if v > 0.0 { v / ((1.0 - iou) + v) } else { 0.0 };

    iou - center_penalty - alpha * v
}

/// One assigned foreground box with its assigner confidence weight.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoxSample {
    pub weight: f64,
    pub pred: [f64; 4],
    pub target: [f64; 4],
}

/// Confidence-weighted CIoU box loss: `(1/S) sum_i w_i (1 - CIoU_i)` with
/// `S = sum_i w_i`.
pub fn box_loss(samples: &[BoxSample]) -> Result<f64> {
    let s: f64 = samples.iter().map(|b| b.weight).sum();
    if samples.is_empty() || s <= 0.0 {
        return Err(Error::InvalidArgument(
            "box loss needs foreground samples with positive total weight".into(),
        ));
    }
    let total: f64 = samples
        .iter()
        .map(|b| b.weight * (1.0 - ciou(b.pred, b.target)))
        .sum();
    Ok(total / s)
}

/// Distribution focal loss of one side: the target `y` lies between bins
/// `floor(y)` and `ceil(y)`, each charged its complementary distance. An
/// integral target degenerates to plain cross-entropy `-ln p_y`.
pub fn dfl_single(probs: &[f64], target: f64) -> Result<f64> {
    let last = (probs.len() - 1) as f64;
    if !(0.0..=last).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "target {target} outside bin range [0, {last}]"
        )));
    }
    let lo = target.floor();
    if lo == target {
        return Ok(-probs[target as usize].max(KL_FLOOR).ln());
    }
    let hi = lo + 1.0;
    let w_lo = hi - target;
    let w_hi = target - lo;
    Ok(-(w_lo * probs[lo as usize].max(KL_FLOOR).ln()
        + w_hi * probs[hi as usize].max(KL_FLOOR).ln()))
}

/// One foreground sample for the DFL: per side (l, t, r, b) a predicted bin
/// distribution and a continuous target in bin units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DflSample {
    pub weight: f64,
    pub side_probs: [Vec<f64>; 4],
    pub side_targets: [f64; 4],
}

/// `(1/S) sum_i w_i sum_{k in {l,t,r,b}} LDFL(P_k(i), y_k(i))`.
pub fn dfl_loss(samples: &[DflSample], reg_max: usize) -> Result<f64> {
    let s: f64 = samples.iter().map(|d| d.weight).sum();
    if samples.is_empty() || s <= 0.0 {
        return Err(Error::InvalidArgument(
            "dfl loss needs foreground samples with positive total weight".into(),
        ));
    }
    let mut total = 0.0;
    for d in samples {
        let mut sample_sum = 0.0;
        for side in 0..4 {
            if d.side_probs[side].len() != reg_max {
                return Err(Error::ShapeMismatch(format!(
                    "side {side}: {} bins, expected {reg_max}",
                    d.side_probs[side].len()
                )));
            }
            sample_sum += dfl_single(&d.side_probs[side], d.side_targets[side])?;
        }
        total += d.weight * sample_sum;
    }
    Ok(total / s)
}

/// Teacher map, per-timestep student maps, and the learnable 1x1 projection
/// aligning student channels to teacher channels.
#[derive(Debug)]
pub struct FeatureAlignment<'a> {
    pub teacher: &'a Tensor,
    pub student_steps: &'a [Tensor],
    /// `[C_teacher, C_student, 1, 1]` projection kernel.
    pub projection: &'a Tensor,
}

impl<'a> FeatureAlignment<'a> {
    pub fn new(
        teacher: &'a Tensor,
        student_steps: &'a [Tensor],
        projection: &'a Tensor,
    ) -> Result<Self> {
        let ts = teacher.shape();
        if ts.len() != 4 {
            return Err(Error::ShapeMismatch("teacher map must be BxCxHxW".into()));
        }
        if student_steps.is_empty() {
            return Err(Error::ShapeMismatch(
                "need at least one student timestep".into(),
            ));
        }
        let ps = projection.shape();
        if ps.len() != 4 || ps[2] != 1 || ps[3] != 1 || ps[0] != ts[1] {
            return Err(Error::ShapeMismatch(format!(
                "projection {ps:?} must be [C_teacher={}, C_student, 1, 1]",
                ts[1]
            )));
        }
        for (t, s) in student_steps.iter().enumerate() {
            let ss = s.shape();
            if ss.len() != 4 || ss[0] != ts[0] || ss[1] != ps[1] || ss[2] != ts[2] || ss[3] != ts[3]
            {
                return Err(Error::ShapeMismatch(format!(
                    "student step {t} shape {ss:?} incompatible with teacher {ts:?}"
                )));
            }
        }
        Ok(Self {
            teacher,
            student_steps,
            projection,
        })
    }

    /// `(1/T) sum_t projection(student[t])` as an f64 buffer shaped like the
    /// teacher map.
    pub fn projected_temporal_mean(&self) -> Result<Vec<f64>> {
        let ts = self.teacher.shape();
        let (b, c_out, h, w) = (ts[0], ts[1], ts[2], ts[3]);
        let c_in = self.projection.shape()[1];
        let proj = self.projection.as_f32()?;
        let hw = h * w;
        let mut mean = vec![0.0f64; b * c_out * hw];
        for step in self.student_steps {
            let sv = step.as_f32()?;
            for bi in 0..b {
                for co in 0..c_out {
                    for ci in 0..c_in {
                        let k = proj[co * c_in + ci] as f64;
                        if k == 0.0 {
                            continue;
                        }
                        let src = (bi * c_in + ci) * hw;
                        let dst = (bi * c_out + co) * hw;
                        for p in 0..hw {
                            mean[dst + p] += k * sv[src + p] as f64;
                        }
                    }
                }
            }
        }
        let t = self.student_steps.len() as f64;
        for v in &mut mean {
            *v /= t;
        }
        Ok(mean)
    }
}

/// Feature-map distillation: `(1/(B H W C)) ||teacher - mean||_F^2`.
pub fn feat_distill(align: &FeatureAlignment) -> Result<f64> {
    let mean = align.projected_temporal_mean()?;
    let tv = align.teacher.as_f32()?;
    let sq: f64 = tv
        .iter()
        .zip(&mean)
        .map(|(&a, &b)| {
            let d = a as f64 - b;
            d * d
        })
        .sum();
    Ok(sq / tv.len() as f64)
}

/// Classification logit distillation over `[B, K, H, W]` maps:
/// `(Tp^2 / B) sum_b KL_rows(softmax_T(student_b), softmax_T(teacher_b))`
/// where each spatial cell is one K-way row. `foreground` restricts the
/// summed cells to the given `(y, x)` positions.
pub fn cls_distill(
    student: &Tensor,
    teacher: &Tensor,
    cfg: &DistillConfig,
    foreground: Option<&[(usize, usize)]>,
) -> Result<f64> {
    if student.shape() != teacher.shape() || student.shape().len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "student {:?} vs teacher {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let [b, k, h, w] = [
        student.shape()[0],
        student.shape()[1],
        student.shape()[2],
        student.shape()[3],
    ];
    let cells: Vec<(usize, usize)> = match foreground {
        Some(fg) => fg.to_vec(),
        None => (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect(),
    };
    if cells.is_empty() {
        return Err(Error::InvalidArgument("no cells to distill over".into()));
    }
    let sv = student.as_f32()?;
    let tv = teacher.as_f32()?;
    let hw = h * w;
    let mut total = 0.0;
    for bi in 0..b {
        let mut s_rows = Vec::with_capacity(cells.len());
        let mut t_rows = Vec::with_capacity(cells.len());
        for &(y, x) in &cells {
            let logit = |v: &[f32], c: usize| v[((bi * k + c) * hw) + y * w + x] as f64;
            let s_log: Vec<f64> = (0..k).map(|c| logit(sv, c)).collect();
            let t_log: Vec<f64> = (0..k).map(|c| logit(tv, c)).collect();
            s_rows.push(softmax_t(&s_log, cfg.tp)?);
            t_rows.push(softmax_t(&t_log, cfg.tp)?);
        }
        total += kl_div(&s_rows, &t_rows)?;
    }
    Ok(cfg.tp * cfg.tp * total / b as f64)
}

/// Regression logit distillation over `[B, N, K]` per-box rows
/// (`K = 4 * RegMax`): `(Tp^2 / (B N)) sum_b sum_n KL(row)`.
pub fn dfl_distill(student: &Tensor, teacher: &Tensor, cfg: &DistillConfig) -> Result<f64> {
    if student.shape() != teacher.shape() || student.shape().len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "student {:?} vs teacher {:?}, expected [B, N, K]",
            student.shape(),
            teacher.shape()
        )));
    }
    let [b, n, k] = [student.shape()[0], student.shape()[1], student.shape()[2]];
    if b * n == 0 {
        return Err(Error::InvalidArgument("no boxes to distill over".into()));
    }
    let sv = student.as_f32()?;
    let tv = teacher.as_f32()?;
    let mut total = 0.0;
    for row in 0..b * n {
        let s_log: Vec<f64> = (0..k).map(|c| sv[row * k + c] as f64).collect();
        let t_log: Vec<f64> = (0..k).map(|c| tv[row * k + c] as f64).collect();
        let s = softmax_t(&s_log, cfg.tp)?;
        let t = softmax_t(&t_log, cfg.tp)?;
        total += kl_div(&[s], &[t])?;
    }
    Ok(cfg.tp * cfg.tp * total / (b * n) as f64)
}

/// The six balanced loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub box_loss: f64,
    pub cls_loss: f64,
    pub dfl_loss: f64,
    pub cls_distill: f64,
    pub dfl_distill: f64,
    pub feat_distill: f64,
}

/// `alpha L_box + beta L_cls + gamma L_dfl + theta (L_cls-distill +
/// L_dfl-distill) + eta L_feat-distill`.
pub fn total_loss(c: &LossComponents, cfg: &DistillConfig) -> f64 {
    cfg.alpha * c.box_loss
        + cfg.beta * c.cls_loss
        + cfg.gamma * c.dfl_loss
        + cfg.theta * c.cls_distill
        + cfg.theta * c.dfl_distill
        + cfg.eta * c.feat_distill
}

/// Cosine decay of the logit-distillation weight from 1 to 0.
pub fn theta_schedule(iter: usize, total: usize) -> f64 {
    assert!(iter <= total && total > 0, "iteration outside schedule");
    0.5 * (1.0 + (std::f64::consts::PI * iter as f64 / total as f64).cos())
}

/// Feature-distillation weight: 1 for the first 20% of iterations, then 0.01.
pub fn eta_schedule(iter: usize, total: usize) -> f64 {
    assert!(iter <= total && total > 0, "iteration outside schedule");
    if (iter as f64) < 0.2 * total as f64 {
        1.0
    } else {
        0.01
    }
}
