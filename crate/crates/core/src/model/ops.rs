//! Dense kernels: strided zero-padded convolution (real32 and int8 paths),
//! the two batch-norm variants, and the multi-branch RepVGG forward.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{ConvSpec, RepVggSpec};
use crate::tensor::{Tensor, TensorData};
use crate::{Error, Result};

/// Cross-correlation of a CHW input with an `[out, in, k, k]` weight tensor,
/// zero padding, no bias. Dispatches to the parallel path when built with the
/// `parallel` feature.
pub fn conv2d(input: &Tensor, spec: &ConvSpec, weight: &Tensor) -> Result<Tensor> {
    #[cfg(feature = "parallel")]
    {
        conv2d_par(input, spec, weight)
    }
    #[cfg(not(feature = "parallel"))]
    {
        conv2d_seq(input, spec, weight)
    }
}

/// Sequential convolution; the reference path the parallel kernel must match
/// bit for bit.
// TODO: blocked 3x3 stride-1 fast path; the brute-force oracle tests gate it.
pub fn conv2d_seq(input: &Tensor, spec: &ConvSpec, weight: &Tensor) -> Result<Tensor> {
    let plan = ConvPlan::new(input, spec, weight)?;
    let mut out = vec![0.0f32; spec.out_ch * plan.oh * plan.ow];
    match plan.weights {
        ConvWeights::F32(w) => {
            for (oc, chunk) in out.chunks_mut(plan.oh * plan.ow).enumerate() {
                plan.fill_channel_f32(oc, w, chunk);
            }
        }
        ConvWeights::I8 { values, scale } => {
            let (qx, sx) = quantize_activations(plan.input);
            for (oc, chunk) in out.chunks_mut(plan.oh * plan.ow).enumerate() {
                plan.fill_channel_i8(oc, values, scale * sx, &qx, chunk);
            }
        }
    }
    Tensor::from_f32(&[spec.out_ch, plan.oh, plan.ow], out)
}

/// Parallel convolution over output channels.
#[cfg(feature = "parallel")]
pub fn conv2d_par(input: &Tensor, spec: &ConvSpec, weight: &Tensor) -> Result<Tensor> {
    let plan = ConvPlan::new(input, spec, weight)?;
    let mut out = vec![0.0f32; spec.out_ch * plan.oh * plan.ow];
    match plan.weights {
        ConvWeights::F32(w) => {
            out.par_chunks_mut(plan.oh * plan.ow)
                .enumerate()
                .for_each(|(oc, chunk)| plan.fill_channel_f32(oc, w, chunk));
        }
        ConvWeights::I8 { values, scale } => {
            let (qx, sx) = quantize_activations(plan.input);
            out.par_chunks_mut(plan.oh * plan.ow)
                .enumerate()
                .for_each(|(oc, chunk)| plan.fill_channel_i8(oc, values, scale * sx, &qx, chunk));
        }
    }
    Tensor::from_f32(&[spec.out_ch, plan.oh, plan.ow], out)
}

enum ConvWeights<'a> {
    F32(&'a [f32]),
    I8 { values: &'a [i8], scale: f32 },
}

struct ConvPlan<'a> {
    input: &'a [f32],
    weights: ConvWeights<'a>,
    in_ch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    padding: usize,
}

impl<'a> ConvPlan<'a> {
    fn new(input: &'a Tensor, spec: &ConvSpec, weight: &'a Tensor) -> Result<Self> {
        if input.shape().len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "conv input must be CHW, got {:?}",
                input.shape()
            )));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if c != spec.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                spec.in_ch
            )));
        }
        if weight.shape() != spec.weight_shape().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "weight shape {:?} does not match spec {:?}",
                weight.shape(),
                spec.weight_shape()
            )));
        }
        let (oh, ow) = spec.output_hw(h, w)?;
        let weights = match weight.data() {
            TensorData::F32(v) => ConvWeights::F32(v),
            TensorData::I8 { values, scale } => ConvWeights::I8 {
                values,
                scale: *scale,
            },
        };
        Ok(Self {
            input: input.as_f32()?,
            weights,
            in_ch: spec.in_ch,
            h,
            w,
            oh,
            ow,
            k: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
        })
    }

    fn fill_channel_f32(&self, oc: usize, weight: &[f32], out: &mut [f32]) {
        let w_base = oc * self.in_ch * self.k * self.k;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let mut acc = 0.0f32;
                for ic in 0..self.in_ch {
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            acc += self.input[(ic * self.h + iy as usize) * self.w + ix as usize]
                                * weight[((ic * self.k) + ky) * self.k + kx + w_base];
                        }
                    }
                }
                out[oy * self.ow + ox] = acc;
            }
        }
    }

    /// Integer path: i8 x i8 products accumulate in i32, one rescale at the
    /// end by the combined weight/activation scale.
    fn fill_channel_i8(
        &self,
        oc: usize,
        weight: &[i8],
        combined_scale: f32,
        qx: &[i8],
        out: &mut [f32],
    ) {
        let w_base = oc * self.in_ch * self.k * self.k;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let mut acc = 0i32;
                for ic in 0..self.in_ch {
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let xv = qx[(ic * self.h + iy as usize) * self.w + ix as usize] as i32;
                            let wv = weight[((ic * self.k) + ky) * self.k + kx + w_base] as i32;
                            acc += xv * wv;
                        }
                    }
                }
                out[oy * self.ow + ox] = acc as f32 * combined_scale;
            }
        }
    }
}

/// Symmetric per-tensor activation quantization for the int8 conv path:
/// scale = max|x| / 127 (1.0 for an all-zero tensor).
fn quantize_activations(x: &[f32]) -> (Vec<i8>, f32) {
    let max_abs = x.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
    let q = x
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    (q, scale)
}

/// Full batch normalization: `gamma * (x - mean) / sqrt(var + eps) + beta`
/// per channel.
pub fn apply_bn(
    input: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    epsilon: f32,
) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm over {} channels applied to shape {:?}",
            mean.len(),
            shape
        )));
    }
    if mean.len() != var.len() || mean.len() != gamma.len() || mean.len() != beta.len() {
        return Err(Error::ShapeMismatch(
            "batch norm parameter lengths differ".into(),
        ));
    }
    let hw = shape[1] * shape[2];
    let x = input.as_f32()?;
    let mut out = vec![0.0f32; x.len()];
    for c in 0..shape[0] {
        let denom = var[c] + epsilon;
        if denom <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "channel {c}: var + epsilon = {denom} is not positive"
            )));
        }
        let inv_std = 1.0 / denom.sqrt();
        for i in 0..hw {
            out[c * hw + i] = gamma[c] * (x[c * hw + i] - mean[c]) * inv_std + beta[c];
        }
    }
    Tensor::from_f32(shape, out)
}

/// Mean-only batch normalization: `x - mean` per channel.
pub fn apply_mean_only_bn(input: &Tensor, mean: &[f32]) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "mean-only norm over {} channels applied to shape {:?}",
            mean.len(),
            shape
        )));
    }
    let hw = shape[1] * shape[2];
    let x = input.as_f32()?;
    let mut out = vec![0.0f32; x.len()];
    for c in 0..shape[0] {
        for i in 0..hw {
            out[c * hw + i] = x[c * hw + i] - mean[c];
        }
    }
    Tensor::from_f32(shape, out)
}

/// Per-branch BatchNorm parameters of a RepVGG branch, sliced from the
/// layer's tensor bundle.
pub struct BnParams<'a> {
    pub mean: &'a [f32],
    pub var: &'a [f32],
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
}

impl<'a> BnParams<'a> {
    pub fn from_tensors(t: &'a [Tensor]) -> Result<Self> {
        if t.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "batch norm bundle needs 4 tensors, got {}",
                t.len()
            )));
        }
        Ok(Self {
            mean: t[0].as_f32()?,
            var: t[1].as_f32()?,
            gamma: t[2].as_f32()?,
            beta: t[3].as_f32()?,
        })
    }
}

/// Training-form RepVGG forward: sum of the BN-normalized 3x3, 1x1 and
/// identity branches. Tensor bundle order matches
/// [`crate::model::weights::expected_tensor_shapes`].
pub fn repvgg_forward(input: &Tensor, spec: &RepVggSpec, tensors: &[Tensor]) -> Result<Tensor> {
    let mut idx = 0;
    let w3 = &tensors[idx];
    idx += 1;
    let bn3 = BnParams::from_tensors(&tensors[idx..idx + 4])?;
    idx += 4;

    let y3 = conv2d(input, &spec.branch_3x3(), w3)?;
    let mut out = apply_bn(&y3, bn3.mean, bn3.var, bn3.gamma, bn3.beta, spec.epsilon)?;

    if spec.has_one_by_one {
        let w1 = &tensors[idx];
        idx += 1;
        let bn1 = BnParams::from_tensors(&tensors[idx..idx + 4])?;
        idx += 4;
        let y1 = conv2d(input, &spec.branch_1x1(), w1)?;
        let y1 = apply_bn(&y1, bn1.mean, bn1.var, bn1.gamma, bn1.beta, spec.epsilon)?;
        add_assign(&mut out, &y1)?;
    }
    if spec.has_identity {
        let bnid = BnParams::from_tensors(&tensors[idx..idx + 4])?;
        let yid = apply_bn(
            input,
            bnid.mean,
            bnid.var,
            bnid.gamma,
            bnid.beta,
            spec.epsilon,
        )?;
        add_assign(&mut out, &yid)?;
    }
    Ok(out)
}

fn add_assign(acc: &mut Tensor, other: &Tensor) -> Result<()> {
    if acc.shape() != other.shape() {
        return Err(Error::ShapeMismatch(format!(
            "branch outputs disagree: {:?} vs {:?}",
            acc.shape(),
            other.shape()
        )));
    }
    let rhs = other.as_f32()?.to_vec();
    for (a, b) in acc.as_f32_mut()?.iter_mut().zip(rhs) {
        *a += b;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_spec(in_ch: usize, out_ch: usize, k: usize, s: usize, p: usize) -> ConvSpec {
        ConvSpec {
            in_ch,
            out_ch,
            kernel: k,
            stride: s,
            padding: p,
            has_bias: false,
        }
    }

    /// Naive 6-nested-loop oracle, deliberately structured differently from
    /// the kernel (full loop over taps, f64 accumulation).
    fn conv_oracle(input: &Tensor, spec: &ConvSpec, weight: &[f32]) -> Vec<f32> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oh, ow) = spec.output_hw(h, w).unwrap();
        let x = input.as_f32().unwrap();
        let mut out = vec![0.0f32; spec.out_ch * oh * ow];
        for oc in 0..spec.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ic in 0..c {
                        for ky in 0..spec.kernel {
                            for kx in 0..spec.kernel {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                    let xv = x[(ic * h + iy as usize) * w + ix as usize] as f64;
                                    let wv = weight
                                        [((oc * c + ic) * spec.kernel + ky) * spec.kernel + kx]
                                        as f64;
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f32 {
        // xorshift-style generator, good enough for test data
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) as f32 * 2.0 - 1.0
    }

    #[test]
    fn identity_one_by_one_kernel() {
        let input = Tensor::from_f32(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let spec = conv_spec(1, 1, 1, 1, 0);
        let w = Tensor::from_f32(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv2d(&input, &spec, &w).unwrap();
        assert_eq!(out.as_f32().unwrap(), input.as_f32().unwrap());
    }

    #[test]
    fn strided_shape() {
        let input = Tensor::zeros(&[1, 8, 8]);
        let spec = conv_spec(1, 1, 3, 2, 1);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let out = conv2d(&input, &spec, &w).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut seed = 0x1234_5678_9abc_def0u64;
        for &(k, s, p) in &[(1usize, 1usize, 0usize), (3, 1, 1), (3, 2, 1), (5, 2, 2)] {
            let spec = conv_spec(2, 3, k, s, p);
            let input =
                Tensor::from_f32(&[2, 5, 5], (0..50).map(|_| lcg(&mut seed)).collect()).unwrap();
            let wdata: Vec<f32> = (0..3 * 2 * k * k).map(|_| lcg(&mut seed)).collect();
            let w = Tensor::from_f32(&[3, 2, k, k], wdata.clone()).unwrap();
            let got = conv2d(&input, &spec, &w).unwrap();
            let want = conv_oracle(&input, &spec, &wdata);
            for (a, b) in got.as_f32().unwrap().iter().zip(&want) {
                assert!(
                    (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                    "k={k} s={s} p={p}: {a} vs {b}"
                );
            }
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let mut seed = 42u64;
        let input =
            Tensor::from_f32(&[3, 9, 7], (0..189).map(|_| lcg(&mut seed)).collect()).unwrap();
        let spec = conv_spec(3, 8, 3, 2, 1);
        let w =
            Tensor::from_f32(&[8, 3, 3, 3], (0..216).map(|_| lcg(&mut seed)).collect()).unwrap();
        let a = conv2d_seq(&input, &spec, &w).unwrap();
        let b = conv2d_par(&input, &spec, &w).unwrap();
        assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap());
    }

    #[test]
    fn bn_identity_parameters() {
        let input = Tensor::from_f32(&[1, 2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let out = apply_bn(&input, &[0.0], &[1.0], &[1.0], &[0.0], 0.0).unwrap();
        assert_eq!(out.as_f32().unwrap(), input.as_f32().unwrap());

        let out = apply_mean_only_bn(&input, &[0.0]).unwrap();
        assert_eq!(out.as_f32().unwrap(), input.as_f32().unwrap());
    }

    #[test]
    fn bn_matches_scalar_formula() {
        let mut seed = 7u64;
        let input =
            Tensor::from_f32(&[2, 3, 3], (0..18).map(|_| lcg(&mut seed)).collect()).unwrap();
        let (mean, var, gamma, beta) = ([0.3, -0.1], [0.5, 2.0], [1.2, 0.8], [0.05, -0.4]);
        let eps = 1e-5;
        let out = apply_bn(&input, &mean, &var, &gamma, &beta, eps).unwrap();
        for c in 0..2 {
            for i in 0..9 {
                let x = input.as_f32().unwrap()[c * 9 + i];
                let want = gamma[c] * (x - mean[c]) / (var[c] + eps).sqrt() + beta[c];
                let got = out.as_f32().unwrap()[c * 9 + i];
                assert!((got - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bn_rejects_nonpositive_variance() {
        let input = Tensor::zeros(&[1, 1, 1]);
        assert!(apply_bn(&input, &[0.0], &[-1.0], &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn int8_weight_path_tracks_f32_path() {
        let mut seed = 99u64;
        let input =
            Tensor::from_f32(&[2, 6, 6], (0..72).map(|_| lcg(&mut seed).abs()).collect()).unwrap();
        let spec = conv_spec(2, 4, 3, 1, 1);
        let wdata: Vec<f32> = (0..72).map(|_| lcg(&mut seed)).collect();
        let max_abs = wdata.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        let scale = max_abs / 127.0;
        let q: Vec<i8> = wdata
            .iter()
            .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
            .collect();
        let wf = Tensor::from_f32(&[4, 2, 3, 3], wdata).unwrap();
        let wq = Tensor::from_i8(&[4, 2, 3, 3], q, scale).unwrap();
        let yf = conv2d(&input, &spec, &wf).unwrap();
        let yq = conv2d(&input, &spec, &wq).unwrap();
        let max_mag = yf
            .as_f32()
            .unwrap()
            .iter()
            .fold(0.0f32, |m, &v| m.max(v.abs()));
        for (a, b) in yf.as_f32().unwrap().iter().zip(yq.as_f32().unwrap()) {
            assert!((a - b).abs() < 0.05 * max_mag.max(1.0), "{a} vs {b}");
        }
    }
}
