//! Layer and network specifications under the target-hardware constraints,
//! plus the dense kernels that execute them.
//!
//! Networks are strictly sequential chains (the hardware does not branch);
//! the only multi-branch construct is the RepVGG block, which a deployment
//! transform collapses into a single 3x3 convolution. Convolutions never
//! carry bias terms and there is no pooling layer kind; downsampling is done
//! by strided convolution.

pub mod ops;
pub mod weights;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};
use weights::WeightSet;

/// Hard neuron budget of a single target chip.
pub const NEURON_BUDGET: usize = 1_000_000;
/// Spiking threshold of hidden-layer LIF neurons.
pub const V_TH_HIDDEN: f32 = 1.0;
/// Threshold assigned to the output layer so it never spikes.
pub const V_TH_OUTPUT: f32 = 2048.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Always false for deployable networks; kept so validation can report it.
    #[serde(default)]
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = conv_out_dim(h, self.kernel, self.stride, self.padding)?;
        let ow = conv_out_dim(w, self.kernel, self.stride, self.padding)?;
        Ok((oh, ow))
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch, self.kernel, self.kernel]
    }
}

fn conv_out_dim(dim: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if s == 0 || k == 0 {
        return Err(Error::InvalidSpec("kernel and stride must be >= 1".into()));
    }
    let padded = dim + 2 * p;
    if padded < k {
        return Err(Error::InvalidSpec(format!(
            "spatial dim {dim} with padding {p} smaller than kernel {k}"
        )));
    }
    Ok((padded - k) / s + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifSpec {
    pub v_th: f32,
    pub tau: f32,
    pub spiking: bool,
}

/// Training-time residual block: a 3x3 conv branch, an optional 1x1 branch
/// and an optional identity branch, each followed by its own BatchNorm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepVggSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub has_one_by_one: bool,
    pub has_identity: bool,
    pub epsilon: f32,
}

impl RepVggSpec {
    /// The equivalent fused convolution: 3x3, padding 1.
    pub fn fused_conv(&self) -> ConvSpec {
        ConvSpec {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: 3,
            stride: self.stride,
            padding: 1,
            has_bias: false,
        }
    }

    pub fn branch_3x3(&self) -> ConvSpec {
        self.fused_conv()
    }

    pub fn branch_1x1(&self) -> ConvSpec {
        ConvSpec {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: 1,
            stride: self.stride,
            padding: 0,
            has_bias: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d(ConvSpec),
    BatchNorm { channels: usize, epsilon: f32 },
    MeanOnlyBatchNorm { channels: usize },
    Lif(LifSpec),
    RepVgg(RepVggSpec),
}

/// An ordered single-chain layer graph with a fixed compiled input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default)]
    pub name: String,
    /// Channel-first input shape `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Number of deployed pipeline stages (conv stages, fused or not). This
    /// is the `N` of the pipelined readout offset and the latency model.
    pub fn deployed_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv2d(_) | LayerSpec::RepVgg(_)))
            .count()
    }

    /// Walks the chain and returns the activation shape after every layer.
    pub fn layer_shapes(&self, input_shape: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        let mut cur = input_shape;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Conv2d(c) => {
                    if c.in_ch != cur[0] {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: conv expects {} input channels, chain provides {}",
                            c.in_ch, cur[0]
                        )));
                    }
                    let (oh, ow) = c.output_hw(cur[1], cur[2])?;
                    [c.out_ch, oh, ow]
                }
                LayerSpec::RepVgg(r) => {
                    if r.in_ch != cur[0] {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: repvgg expects {} input channels, chain provides {}",
                            r.in_ch, cur[0]
                        )));
                    }
                    let (oh, ow) = r.fused_conv().output_hw(cur[1], cur[2])?;
                    [r.out_ch, oh, ow]
                }
                LayerSpec::BatchNorm { channels, .. }
                | LayerSpec::MeanOnlyBatchNorm { channels } => {
                    if *channels != cur[0] {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: norm over {channels} channels, chain provides {}",
                            cur[0]
                        )));
                    }
                    cur
                }
                LayerSpec::Lif(_) => cur,
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }
}

/// Total LIF activation elements at the given input resolution.
pub fn count_neurons(spec: &NetworkSpec, input_shape: [usize; 3]) -> Result<usize> {
    let shapes = spec.layer_shapes(input_shape)?;
    let mut total = 0usize;
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        if matches!(layer, LayerSpec::Lif(_)) {
            total += shape.iter().product::<usize>();
        }
    }
    Ok(total)
}

/// Total parameter elements: conv weights plus the trainable BatchNorm pair
/// (gamma, beta) and the mean-only BN mean.
pub fn count_params(spec: &NetworkSpec) -> usize {
    spec.layers
        .iter()
        .map(|layer| match layer {
            LayerSpec::Conv2d(c) => c.out_ch * c.in_ch * c.kernel * c.kernel,
            LayerSpec::BatchNorm { channels, .. } => 2 * channels,
            LayerSpec::MeanOnlyBatchNorm { channels } => *channels,
            LayerSpec::Lif(_) => 0,
            LayerSpec::RepVgg(r) => {
                let mut p = r.out_ch * r.in_ch * 9 + 2 * r.out_ch;
                if r.has_one_by_one {
                    p += r.out_ch * r.in_ch + 2 * r.out_ch;
                }
                if r.has_identity {
                    p += 2 * r.out_ch;
                }
                p
            }
        })
        .sum()
}

/// Report-style validation result. Violations make a spec undeployable;
/// warnings flag suspicious but runnable configurations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the hardware deployment rules: no conv bias, no branching outside
/// RepVGG blocks, neuron budget, and the spiking/threshold discipline (every
/// LIF spikes at threshold 1.0 except the final non-spiking readout layer at
/// threshold 2048).
pub fn validate_spec(spec: &NetworkSpec, input_shape: [usize; 3]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let last_lif_idx = spec
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Lif(_)));

    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv2d(c) => {
                if c.has_bias {
                    report
                        .violations
                        .push(format!("layer {i}: conv carries a bias term"));
                }
            }
            LayerSpec::RepVgg(r) => {
                if r.has_identity && (r.in_ch != r.out_ch || r.stride != 1) {
                    report.violations.push(format!(
                        "layer {i}: identity branch requires matching channels and stride 1"
                    ));
                }
            }
            LayerSpec::Lif(lif) => {
                if Some(i) == last_lif_idx {
                    if lif.spiking {
                        report
                            .violations
                            .push(format!("layer {i}: output LIF must be non-spiking"));
                    }
                    if lif.v_th != V_TH_OUTPUT {
                        report.violations.push(format!(
                            "layer {i}: output LIF threshold {} != {V_TH_OUTPUT}",
                            lif.v_th
                        ));
                    }
                } else {
                    if !lif.spiking {
                        report
                            .violations
                            .push(format!("layer {i}: non-final LIF must be spiking"));
                    }
                    if lif.v_th != V_TH_HIDDEN {
                        report.warnings.push(format!(
                            "layer {i}: hidden LIF threshold {} != {V_TH_HIDDEN}",
                            lif.v_th
                        ));
                    }
                }
                if lif.tau <= 0.0 {
                    report
                        .violations
                        .push(format!("layer {i}: LIF tau must be positive"));
                }
            }
            LayerSpec::BatchNorm { epsilon, .. } => {
                if *epsilon <= 0.0 {
                    report
                        .violations
                        .push(format!("layer {i}: BatchNorm epsilon must be positive"));
                }
            }
            LayerSpec::MeanOnlyBatchNorm { .. } => {}
        }
    }

    match spec.layer_shapes(input_shape) {
        Ok(_) => match count_neurons(spec, input_shape) {
            Ok(n) if n >= NEURON_BUDGET => report
                .violations
                .push(format!("neuron budget exceeded: {n} >= {NEURON_BUDGET}")),
            Ok(_) => {}
            Err(e) => report.violations.push(e.to_string()),
        },
        Err(e) => report.violations.push(e.to_string()),
    }

    report
}

/// A spec bound to its weight tensors, with per-layer shape checking done.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: WeightSet,
    tensor_ranges: Vec<(usize, usize)>,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: WeightSet) -> Result<Self> {
        let expected = weights::expected_tensor_shapes(&spec);
        if expected.len() != weights.tensors.len() {
            return Err(Error::InvalidSpec(format!(
                "spec needs {} weight tensors, weight set has {}",
                expected.len(),
                weights.tensors.len()
            )));
        }
        for (i, (shape, tensor)) in expected.iter().zip(&weights.tensors).enumerate() {
            if shape.as_slice() != tensor.shape() {
                return Err(Error::InvalidSpec(format!(
                    "weight tensor {i}: expected shape {:?}, got {:?}",
                    shape,
                    tensor.shape()
                )));
            }
        }
        let mut tensor_ranges = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for layer in &spec.layers {
            let n = weights::tensors_per_layer(layer);
            tensor_ranges.push((offset, n));
            offset += n;
        }
        Ok(Self {
            spec,
            weights,
            tensor_ranges,
        })
    }

    /// The weight tensors belonging to layer `i`, in traversal order.
    pub fn layer_tensors(&self, i: usize) -> &[Tensor] {
        let (start, len) = self.tensor_ranges[i];
        &self.weights.tensors[start..start + len]
    }

    pub fn layer_tensors_mut(&mut self, i: usize) -> &mut [Tensor] {
        let (start, len) = self.tensor_ranges[i];
        &mut self.weights.tensors[start..start + len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lif_hidden() -> LayerSpec {
        LayerSpec::Lif(LifSpec {
            v_th: V_TH_HIDDEN,
            tau: 2.0,
            spiking: true,
        })
    }

    fn lif_output() -> LayerSpec {
        LayerSpec::Lif(LifSpec {
            v_th: V_TH_OUTPUT,
            tau: 2.0,
            spiking: false,
        })
    }

    fn conv(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> LayerSpec {
        LayerSpec::Conv2d(ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            has_bias: false,
        })
    }

    #[test]
    fn empty_network_counts_zero() {
        let spec = NetworkSpec {
            name: String::new(),
            input_shape: [3, 8, 8],
            layers: vec![],
        };
        assert_eq!(count_neurons(&spec, [3, 8, 8]).unwrap(), 0);
        assert_eq!(count_params(&spec), 0);
    }

    #[test]
    fn hand_counted_neurons_and_params() {
        // conv 3->16 k=3 on 8x8 input (stride 1, pad 1) keeps 8x8; LIF sees
        // 16*8*8 = 1024 activations; weights 16*3*3*3 = 432.
        let spec = NetworkSpec {
            name: String::new(),
            input_shape: [3, 8, 8],
            layers: vec![conv(3, 16, 3, 1, 1), lif_output()],
        };
        assert_eq!(count_neurons(&spec, [3, 8, 8]).unwrap(), 1024);
        assert_eq!(count_params(&spec), 432);
    }

    #[test]
    fn stride_two_shape_arithmetic() {
        let c = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 2,
            padding: 1,
            has_bias: false,
        };
        assert_eq!(c.output_hw(8, 8).unwrap(), (4, 4));
    }

    #[test]
    fn neuron_count_scales_with_area() {
        let spec = NetworkSpec {
            name: String::new(),
            input_shape: [1, 16, 16],
            layers: vec![
                conv(1, 4, 3, 1, 1),
                lif_hidden(),
                conv(4, 8, 3, 2, 1),
                lif_output(),
            ],
        };
        let base = count_neurons(&spec, [1, 16, 16]).unwrap();
        let doubled = count_neurons(&spec, [1, 32, 16]).unwrap();
        assert_eq!(doubled, 2 * base);
    }

    #[test]
    fn validation_rule_table() {
        let valid = NetworkSpec {
            name: String::new(),
            input_shape: [1, 8, 8],
            layers: vec![
                conv(1, 4, 3, 1, 1),
                lif_hidden(),
                conv(4, 2, 1, 1, 0),
                lif_output(),
            ],
        };
        let report = validate_spec(&valid, [1, 8, 8]);
        assert!(report.is_valid(), "violations: {:?}", report.violations);
        assert!(report.warnings.is_empty());

        // budget: 128 channels on 128x128 input = 2.1M activations
        let big = NetworkSpec {
            name: String::new(),
            input_shape: [1, 128, 128],
            layers: vec![
                conv(1, 128, 3, 1, 1),
                lif_hidden(),
                conv(128, 2, 1, 1, 0),
                lif_output(),
            ],
        };
        let report = validate_spec(&big, [1, 128, 128]);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("neuron budget exceeded")));

        // hidden LIF with the output threshold but spiking -> warning only
        let odd = NetworkSpec {
            name: String::new(),
            input_shape: [1, 8, 8],
            layers: vec![
                conv(1, 4, 3, 1, 1),
                LayerSpec::Lif(LifSpec {
                    v_th: V_TH_OUTPUT,
                    tau: 2.0,
                    spiking: true,
                }),
                conv(4, 2, 1, 1, 0),
                lif_output(),
            ],
        };
        let report = validate_spec(&odd, [1, 8, 8]);
        assert!(report.is_valid());
        assert_eq!(report.warnings.len(), 1);

        // bias present
        let mut biased = valid.clone();
        if let LayerSpec::Conv2d(c) = &mut biased.layers[0] {
            c.has_bias = true;
        }
        assert!(!validate_spec(&biased, [1, 8, 8]).is_valid());

        // non-final non-spiking LIF
        let mut mid_readout = valid.clone();
        if let LayerSpec::Lif(l) = &mut mid_readout.layers[1] {
            l.spiking = false;
        }
        assert!(!validate_spec(&mid_readout, [1, 8, 8]).is_valid());

        // final LIF threshold off
        let mut bad_out = valid;
        if let LayerSpec::Lif(l) = &mut bad_out.layers[3] {
            l.v_th = 100.0;
        }
        assert!(!validate_spec(&bad_out, [1, 8, 8]).is_valid());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = NetworkSpec {
            name: "tiny".into(),
            input_shape: [2, 12, 16],
            layers: vec![
                LayerSpec::RepVgg(RepVggSpec {
                    in_ch: 2,
                    out_ch: 2,
                    stride: 1,
                    has_one_by_one: true,
                    has_identity: true,
                    epsilon: 1e-5,
                }),
                lif_hidden(),
                conv(2, 7, 1, 1, 0),
                lif_output(),
            ],
        };
        let json = spec.to_json().unwrap();
        assert_eq!(NetworkSpec::from_json(&json).unwrap(), spec);
    }
}
