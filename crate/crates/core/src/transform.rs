//! Deployment transforms: RepVGG branch fusion, BatchNorm absorption into
//! conv weights, mean clamping, and symmetric int8 weight quantization.
//!
//! The pipeline order is fixed: reparameterize, absorb, clamp, quantize.
//! Biases produced by folding a BatchNorm into a branch conv are never stored
//! on the conv (deployable convs have no bias); they re-emerge as the mean of
//! a mean-only BatchNorm inserted after the fused layer.

use serde::{Deserialize, Serialize};

use crate::model::weights::WeightSet;
use crate::model::{ops, ConvSpec, LayerSpec, Network, RepVggSpec};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Clamp range applied to mean-only BatchNorm means before deployment.
pub const BN_MEAN_CLAMP_LO: f32 = -0.98;
pub const BN_MEAN_CLAMP_HI: f32 = 1.1;

/// Symmetric per-tensor quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    /// `max|w| / qmax`; 1.0 by convention for an all-zero tensor.
    pub scale: f32,
}

impl QuantParams {
    pub fn for_values(values: &[f32], bits: u32) -> Self {
        let qmax = ((1u32 << (bits - 1)) - 1) as f32;
        let max_abs = values.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        let scale = if max_abs == 0.0 { 1.0 } else { max_abs / qmax };
        Self { bits, scale }
    }

    pub fn qmax(&self) -> f32 {
        ((1u32 << (self.bits - 1)) - 1) as f32
    }
}

/// Quantizes a real32 tensor to int8 storage. Roundtrip error is bounded by
/// `scale / 2` elementwise.
pub fn quantize_tensor(t: &Tensor) -> Result<(Tensor, QuantParams)> {
    let values = t.as_f32()?;
    let qp = QuantParams::for_values(values, 8);
    let q: Vec<i8> = values
        .iter()
        .map(|&v| (v / qp.scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok((Tensor::from_i8(t.shape(), q, qp.scale)?, qp))
}

/// Rounds values onto the `bits`-wide symmetric grid but keeps f32 storage.
/// Used for the precision-ladder comparison against the int8 path.
pub fn fake_quantize(t: &Tensor, bits: u32) -> Result<Tensor> {
    let values = t.as_f32()?;
    let qp = QuantParams::for_values(values, bits);
    let out = values
        .iter()
        .map(|&v| (v / qp.scale).round().clamp(-qp.qmax(), qp.qmax()) * qp.scale)
        .collect();
    Tensor::from_f32(t.shape(), out)
}

/// Folds a BatchNorm into the preceding conv:
/// `W' = W * gamma / sqrt(var + eps)` per output channel, and the retained
/// mean-only parameter `mu' = mu * gamma / sqrt(var + eps) - beta`, so that
/// `mean_only(conv'(x), mu') == bn(conv(x))` for all x.
pub fn absorb_bn(
    conv: &ConvSpec,
    weight: &Tensor,
    bn: &ops::BnParams,
    epsilon: f32,
) -> Result<(Tensor, Vec<f32>)> {
    if bn.mean.len() != conv.out_ch {
        return Err(Error::ShapeMismatch(format!(
            "bn over {} channels cannot absorb into conv with {} outputs",
            bn.mean.len(),
            conv.out_ch
        )));
    }
    let w = weight.as_f32()?;
    let per_out = conv.in_ch * conv.kernel * conv.kernel;
    let mut w_out = vec![0.0f32; w.len()];
    let mut mean_only = vec![0.0f32; conv.out_ch];
    for oc in 0..conv.out_ch {
        let denom = bn.var[oc] + epsilon;
        if denom <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "channel {oc}: var + epsilon = {denom} is not positive"
            )));
        }
        let k = bn.gamma[oc] / denom.sqrt();
        for i in 0..per_out {
            w_out[oc * per_out + i] = w[oc * per_out + i] * k;
        }
        mean_only[oc] = bn.mean[oc] * k - bn.beta[oc];
    }
    Ok((Tensor::from_f32(weight.shape(), w_out)?, mean_only))
}

/// Collapses a RepVGG block into one 3x3 conv plus a per-channel bias. Each
/// branch BN folds into its conv, 1x1 kernels zero-pad to 3x3, the identity
/// branch becomes a per-channel Dirac kernel, and branch kernels/biases sum.
///
/// Returns the fused conv spec, its weight tensor, and the bias vector the
/// caller must re-express through a downstream mean-only BN (mean = -bias).
pub fn reparam_repvgg(
    spec: &RepVggSpec,
    tensors: &[Tensor],
) -> Result<(ConvSpec, Tensor, Vec<f32>)> {
    let fused_spec = spec.fused_conv();
    let per_out = spec.in_ch * 9;
    let mut kernel = vec![0.0f32; spec.out_ch * per_out];
    let mut bias = vec![0.0f32; spec.out_ch];

    let mut idx = 0;
    // 3x3 branch
    let w3 = &tensors[idx];
    idx += 1;
    let bn3 = ops::BnParams::from_tensors(&tensors[idx..idx + 4])?;
    idx += 4;
    accumulate_branch(&mut kernel, &mut bias, spec, w3.as_f32()?, 3, &bn3)?;

    if spec.has_one_by_one {
        let w1 = &tensors[idx];
        idx += 1;
        let bn1 = ops::BnParams::from_tensors(&tensors[idx..idx + 4])?;
        idx += 4;
        accumulate_branch(&mut kernel, &mut bias, spec, w1.as_f32()?, 1, &bn1)?;
    }
    if spec.has_identity {
        if spec.in_ch != spec.out_ch || spec.stride != 1 {
            return Err(Error::InvalidSpec(
                "identity branch requires matching channels and stride 1".into(),
            ));
        }
        let bnid = ops::BnParams::from_tensors(&tensors[idx..idx + 4])?;
        // Dirac kernel: 1 at the center of each channel's own plane
        let mut dirac = vec![0.0f32; spec.out_ch * per_out];
        for c in 0..spec.out_ch {
            dirac[c * per_out + c * 9 + 4] = 1.0;
        }
        accumulate_branch(&mut kernel, &mut bias, spec, &dirac, 3, &bnid)?;
    }

    let weight = Tensor::from_f32(&[spec.out_ch, spec.in_ch, 3, 3], kernel)?;
    Ok((fused_spec, weight, bias))
}

/// Adds one BN-folded branch into the fused 3x3 kernel. 1x1 weights land at
/// the kernel center.
fn accumulate_branch(
    kernel: &mut [f32],
    bias: &mut [f32],
    spec: &RepVggSpec,
    w: &[f32],
    k: usize,
    bn: &ops::BnParams,
) -> Result<()> {
    let per_out = spec.in_ch * 9;
    let offset = (3 - k) / 2;
    for (oc, b) in bias.iter_mut().enumerate() {
        let denom = bn.var[oc] + spec.epsilon;
        if denom <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "channel {oc}: var + epsilon = {denom} is not positive"
            )));
        }
        let g = bn.gamma[oc] / denom.sqrt();
        for ic in 0..spec.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let src = ((oc * spec.in_ch + ic) * k + ky) * k + kx;
                    let dst = oc * per_out + ic * 9 + (ky + offset) * 3 + (kx + offset);
                    kernel[dst] += w[src] * g;
                }
            }
        }
        *b += bn.beta[oc] - bn.mean[oc] * g;
    }
    Ok(())
}

/// Clamps every mean-only BatchNorm mean into the deployable range.
pub fn clamp_bn_means(net: &mut Network) -> Result<()> {
    for i in 0..net.spec.layers.len() {
        if matches!(net.spec.layers[i], LayerSpec::MeanOnlyBatchNorm { .. }) {
            for m in net.layer_tensors_mut(i)[0].as_f32_mut()? {
                *m = m.clamp(BN_MEAN_CLAMP_LO, BN_MEAN_CLAMP_HI);
            }
        }
    }
    Ok(())
}

/// Quantizes every conv weight tensor (including RepVGG branch weights) to
/// int8; norm parameter vectors stay real32.
pub fn quantize_weights(net: &mut Network) -> Result<Vec<QuantParams>> {
    let mut params = Vec::new();
    for i in 0..net.spec.layers.len() {
        let is_weighted = matches!(
            net.spec.layers[i],
            LayerSpec::Conv2d(_) | LayerSpec::RepVgg(_)
        );
        if !is_weighted {
            continue;
        }
        for t in net.layer_tensors_mut(i) {
            if t.shape().len() == 4 && !t.is_quantized() {
                let (q, qp) = quantize_tensor(t)?;
                *t = q;
                params.push(qp);
            }
        }
    }
    Ok(params)
}

/// Which stages of the deployment pipeline to run, in the fixed order
/// reparam -> absorb -> clamp -> quantize.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransformOptions {
    pub reparam: bool,
    pub absorb_bn: bool,
    pub clamp: bool,
    pub quantize_int8: bool,
}

/// Per rewritten layer, the worst observed output deviation on random probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEquivalence {
    pub original_layer: usize,
    pub stage: String,
    pub max_abs_error: f32,
    pub max_rel_error: f32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransformReport {
    pub stages: Vec<String>,
    pub layer_equivalence: Vec<LayerEquivalence>,
    pub quantized_tensors: usize,
}

/// Runs the selected pipeline stages, probing each rewritten layer with
/// `probes` random inputs to record its equivalence error.
pub fn apply_transforms(
    net: &Network,
    opts: TransformOptions,
    probes: usize,
    seed: u64,
) -> Result<(Network, TransformReport)> {
    let mut report = TransformReport::default();
    let mut rng = TinyRng::new(seed);
    let shapes = net.spec.layer_shapes(net.spec.input_shape)?;

    let mut layers = Vec::new();
    let mut tensors = Vec::new();

    for (i, layer) in net.spec.layers.iter().enumerate() {
        let in_shape = if i == 0 {
            net.spec.input_shape
        } else {
            shapes[i - 1]
        };
        match layer {
            LayerSpec::RepVgg(r) if opts.reparam => {
                let bundle = net.layer_tensors(i);
                let (fused, weight, bias) = reparam_repvgg(r, bundle)?;
                if probes > 0 {
                    let eq = probe_repvgg(
                        r, bundle, &fused, &weight, &bias, in_shape, probes, &mut rng,
                    )?;
                    report.layer_equivalence.push(LayerEquivalence {
                        original_layer: i,
                        stage: "reparam".into(),
                        max_abs_error: eq.0,
                        max_rel_error: eq.1,
                    });
                }
                let mean: Vec<f32> = bias.iter().map(|b| -b).collect();
                layers.push(LayerSpec::Conv2d(fused));
                tensors.push(weight);
                layers.push(LayerSpec::MeanOnlyBatchNorm { channels: r.out_ch });
                tensors.push(Tensor::from_f32(&[r.out_ch], mean)?);
            }
            LayerSpec::BatchNorm { epsilon, .. } if opts.absorb_bn => {
                // fold into the conv we just emitted, when there is one
                let prev_is_conv = matches!(layers.last(), Some(LayerSpec::Conv2d(_)))
                    && matches!(
                        net.spec.layers.get(i.wrapping_sub(1)),
                        Some(LayerSpec::Conv2d(_))
                    );
                if !prev_is_conv {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: cannot absorb BatchNorm without a preceding conv"
                    )));
                }
                let conv = match layers.last().unwrap() {
                    LayerSpec::Conv2d(c) => *c,
                    _ => unreachable!(),
                };
                let bn = ops::BnParams::from_tensors(net.layer_tensors(i))?;
                let weight = tensors.last().unwrap();
                let (w_new, mean_only) = absorb_bn(&conv, weight, &bn, *epsilon)?;
                if probes > 0 {
                    // probe inputs feed the conv, one layer upstream of the BN
                    let conv_in = if i >= 2 {
                        shapes[i - 2]
                    } else {
                        net.spec.input_shape
                    };
                    let eq = probe_absorb(
                        &conv, weight, &bn, *epsilon, &w_new, &mean_only, conv_in, probes, &mut rng,
                    )?;
                    report.layer_equivalence.push(LayerEquivalence {
                        original_layer: i,
                        stage: "absorb_bn".into(),
                        max_abs_error: eq.0,
                        max_rel_error: eq.1,
                    });
                }
                *tensors.last_mut().unwrap() = w_new;
                layers.push(LayerSpec::MeanOnlyBatchNorm {
                    channels: conv.out_ch,
                });
                tensors.push(Tensor::from_f32(&[conv.out_ch], mean_only)?);
            }
            other => {
                layers.push(*other);
                tensors.extend(net.layer_tensors(i).iter().cloned());
            }
        }
    }

    let spec = crate::model::NetworkSpec {
        name: net.spec.name.clone(),
        input_shape: net.spec.input_shape,
        layers,
    };
    let mut out = Network::new(spec, WeightSet::new(tensors))?;

    if opts.reparam {
        report.stages.push("reparam".into());
    }
    if opts.absorb_bn {
        report.stages.push("absorb_bn".into());
    }
    if opts.clamp {
        clamp_bn_means(&mut out)?;
        report.stages.push("clamp".into());
    }
    if opts.quantize_int8 {
        report.quantized_tensors = quantize_weights(&mut out)?.len();
        report.stages.push("quantize_int8".into());
    }
    Ok((out, report))
}

#[allow(clippy::too_many_arguments)]
fn probe_repvgg(
    spec: &RepVggSpec,
    tensors: &[Tensor],
    fused: &ConvSpec,
    weight: &Tensor,
    bias: &[f32],
    in_shape: [usize; 3],
    probes: usize,
    rng: &mut TinyRng,
) -> Result<(f32, f32)> {
    let mut worst = (0.0f32, 0.0f32);
    for _ in 0..probes {
        let x = rng.tensor(&in_shape);
        let want = ops::repvgg_forward(&x, spec, tensors)?;
        let mut got = ops::conv2d(&x, fused, weight)?;
        let hw: usize = got.shape()[1] * got.shape()[2];
        for (c, &b) in bias.iter().enumerate() {
            for v in &mut got.as_f32_mut()?[c * hw..(c + 1) * hw] {
                *v += b;
            }
        }
        update_worst(&mut worst, want.as_f32()?, got.as_f32()?);
    }
    Ok(worst)
}

#[allow(clippy::too_many_arguments)]
fn probe_absorb(
    conv: &ConvSpec,
    weight: &Tensor,
    bn: &ops::BnParams,
    epsilon: f32,
    w_new: &Tensor,
    mean_only: &[f32],
    in_shape: [usize; 3],
    probes: usize,
    rng: &mut TinyRng,
) -> Result<(f32, f32)> {
    let mut worst = (0.0f32, 0.0f32);
    for _ in 0..probes {
        let x = rng.tensor(&in_shape);
        let want = ops::apply_bn(
            &ops::conv2d(&x, conv, weight)?,
            bn.mean,
            bn.var,
            bn.gamma,
            bn.beta,
            epsilon,
        )?;
        let got = ops::apply_mean_only_bn(&ops::conv2d(&x, conv, w_new)?, mean_only)?;
        update_worst(&mut worst, want.as_f32()?, got.as_f32()?);
    }
    Ok(worst)
}

fn update_worst(worst: &mut (f32, f32), want: &[f32], got: &[f32]) {
    for (&a, &b) in want.iter().zip(got) {
        let abs = (a - b).abs();
        let rel = abs / a.abs().max(1.0);
        worst.0 = worst.0.max(abs);
        worst.1 = worst.1.max(rel);
    }
}

/// xorshift64* generator for deterministic probe inputs.
pub(crate) struct TinyRng(u64);

impl TinyRng {
    pub(crate) fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub(crate) fn next_f32(&mut self) -> f32 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        let u = (self.0.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 40) as f64;
        (u / (1u64 << 24) as f64) as f32 * 2.0 - 1.0
    }

    pub(crate) fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.next_f32()).collect();
        Tensor::from_f32(shape, data).expect("generated data matches shape")
    }
}
