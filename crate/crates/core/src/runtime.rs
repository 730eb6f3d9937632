//! Discrete-timestep execution of a network with LIF dynamics.
//!
//! The encoded input tensor is presented unchanged at every timestep (direct
//! encoding). Hidden LIF neurons follow the leaky update
//! `v' = v + (x - v) / tau` with a hard reset to zero on threshold crossing.
//! The non-spiking readout layer integrates its leak-scaled drive without
//! decay, `v' = v + x / tau`, so output membranes accumulate across the
//! decode window; after `t_steps` the accumulated membranes are the raw head
//! output and the next step of the reset period clears all state.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{ops, LayerSpec, Network};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Timestep and reset scheduling for one inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Decode timesteps per inference.
    pub t_steps: usize,
    /// Period of the hardware reset schedule; must be a power of two >= 2.
    /// The step after the decode window is reserved for the reset.
    pub reset_interval: usize,
    pub v_th_hidden: f32,
    pub v_th_out: f32,
    pub tau: f32,
    /// Model the pipelined readout offset of `N + 2` steps.
    pub readout_offset_enabled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_steps: 7,
            reset_interval: 8,
            v_th_hidden: crate::model::V_TH_HIDDEN,
            v_th_out: crate::model::V_TH_OUTPUT,
            tau: 2.0,
            readout_offset_enabled: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reset_interval < 2 || !self.reset_interval.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "reset interval must be a power of two >= 2, got {}",
                self.reset_interval
            )));
        }
        if self.t_steps == 0 || self.t_steps >= self.reset_interval {
            return Err(Error::InvalidArgument(format!(
                "decode steps ({}) must fit inside the reset interval ({})",
                self.t_steps, self.reset_interval
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        Ok(())
    }
}

/// One LIF update over a membrane slice. Spiking neurons follow the leaky
/// form and hard-reset to zero; non-spiking neurons integrate `x / tau` and
/// never emit. `spikes_out` receives 0/1 per neuron.
pub fn lif_step(
    v: &mut [f32],
    input: &[f32],
    v_th: f32,
    tau: f32,
    spiking: bool,
    spikes_out: &mut [f32],
) {
    debug_assert_eq!(v.len(), input.len());
    debug_assert_eq!(v.len(), spikes_out.len());
    if spiking {
        for i in 0..v.len() {
            let v_pre = v[i] + (input[i] - v[i]) / tau;
            if v_pre >= v_th {
                spikes_out[i] = 1.0;
                v[i] = 0.0;
            } else {
                spikes_out[i] = 0.0;
                v[i] = v_pre;
            }
        }
    } else {
        for i in 0..v.len() {
            v[i] += input[i] / tau;
            spikes_out[i] = 0.0;
        }
    }
}

/// Membrane state of every LIF layer plus the position inside the reset
/// period.
#[derive(Debug, Clone)]
pub struct NeuronState {
    /// One membrane buffer per LIF layer, indexed by LIF order.
    membranes: Vec<Vec<f32>>,
    pub step_in_period: usize,
}

impl NeuronState {
    fn new(net: &Network, input_shape: [usize; 3]) -> Result<Self> {
        let shapes = net.spec.layer_shapes(input_shape)?;
        let membranes = net
            .spec
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l, LayerSpec::Lif(_)))
            .map(|(_, s)| vec![0.0f32; s.iter().product()])
            .collect();
        Ok(Self {
            membranes,
            step_in_period: 0,
        })
    }

    pub fn reset(&mut self) {
        for m in &mut self.membranes {
            m.fill(0.0);
        }
        self.step_in_period = 0;
    }

    pub fn all_zero(&self) -> bool {
        self.membranes.iter().all(|m| m.iter().all(|&v| v == 0.0))
    }
}

/// Per-layer spike counts and conv synapse activity accumulated over a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer_index: usize,
    pub spiking: bool,
    /// S_i per neuron, summed over timesteps and samples.
    pub spike_counts: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynapseTrace {
    pub layer_index: usize,
    pub total_synapses: u64,
    pub active_synapses: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpikeTrace {
    /// Samples accumulated (M).
    pub samples: usize,
    /// Decode steps per sample (T).
    pub timesteps: usize,
    pub lif_layers: Vec<LayerTrace>,
    pub conv_layers: Vec<SynapseTrace>,
}

impl SpikeTrace {
    /// Total spikes over spiking-threshold LIF neurons (output layer excluded).
    pub fn total_spikes(&self) -> u64 {
        self.lif_layers
            .iter()
            .filter(|l| l.spiking)
            .map(|l| l.spike_counts.iter().sum::<u64>())
            .sum()
    }

    /// Count of spiking-threshold LIF neurons.
    pub fn spiking_neuron_count(&self) -> usize {
        self.lif_layers
            .iter()
            .filter(|l| l.spiking)
            .map(|l| l.spike_counts.len())
            .sum()
    }
}

struct TraceAccum {
    lif: Vec<LayerTrace>,
    /// Per conv layer: which source elements carried a nonzero value in.
    source_active: Vec<(usize, Vec<bool>)>,
}

/// Runs one timestep through the chain. `trace` accumulates spike counts and
/// conv source activity when present.
fn step_once(
    net: &Network,
    input: &Tensor,
    state: &mut NeuronState,
    mut trace: Option<&mut TraceAccum>,
) -> Result<Tensor> {
    let mut x = input.clone();
    let mut lif_idx = 0;
    let mut conv_idx = 0;
    for (i, layer) in net.spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv2d(c) => {
                if let Some(t) = trace.as_deref_mut() {
                    mark_active(&mut t.source_active[conv_idx].1, &x)?;
                }
                conv_idx += 1;
                x = ops::conv2d(&x, c, &net.layer_tensors(i)[0])?;
            }
            LayerSpec::RepVgg(r) => {
                if let Some(t) = trace.as_deref_mut() {
                    mark_active(&mut t.source_active[conv_idx].1, &x)?;
                }
                conv_idx += 1;
                x = ops::repvgg_forward(&x, r, net.layer_tensors(i))?;
            }
            LayerSpec::BatchNorm { epsilon, .. } => {
                let t = net.layer_tensors(i);
                let bn = ops::BnParams::from_tensors(t)?;
                x = ops::apply_bn(&x, bn.mean, bn.var, bn.gamma, bn.beta, *epsilon)?;
            }
            LayerSpec::MeanOnlyBatchNorm { .. } => {
                x = ops::apply_mean_only_bn(&x, net.layer_tensors(i)[0].as_f32()?)?;
            }
            LayerSpec::Lif(lif) => {
                let v = &mut state.membranes[lif_idx];
                let drive = x.as_f32()?;
                if v.len() != drive.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: LIF state has {} neurons, drive has {}",
                        v.len(),
                        drive.len()
                    )));
                }
                let mut spikes = vec![0.0f32; v.len()];
                lif_step(v, drive, lif.v_th, lif.tau, lif.spiking, &mut spikes);
                if let Some(t) = trace.as_deref_mut() {
                    for (count, &s) in t.lif[lif_idx].spike_counts.iter_mut().zip(&spikes) {
                        if s != 0.0 {
                            *count += 1;
                        }
                    }
                }
                x = if lif.spiking {
                    Tensor::from_f32(x.shape(), spikes)?
                } else {
                    // readout layer: forward the accumulated membranes
                    Tensor::from_f32(x.shape(), v.clone())?
                };
                lif_idx += 1;
            }
        }
    }
    state.step_in_period += 1;
    Ok(x)
}

fn mark_active(flags: &mut [bool], x: &Tensor) -> Result<()> {
    let v = x.as_f32()?;
    if flags.len() != v.len() {
        return Err(Error::ShapeMismatch(
            "conv source activity length mismatch".into(),
        ));
    }
    for (f, &val) in flags.iter_mut().zip(v) {
        if val != 0.0 {
            *f = true;
        }
    }
    Ok(())
}

fn readout(net: &Network, state: &NeuronState) -> Result<Tensor> {
    let shapes = net.spec.layer_shapes(net.spec.input_shape)?;
    let last = net
        .spec
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Lif(_)))
        .ok_or_else(|| Error::InvalidSpec("network has no LIF layer to read out".into()))?;
    let lif_count = state.membranes.len();
    Tensor::from_f32(&shapes[last], state.membranes[lif_count - 1].clone())
}

fn check_input(net: &Network, input: &Tensor) -> Result<()> {
    if input.shape() != net.spec.input_shape {
        return Err(Error::ShapeMismatch(format!(
            "input shape {:?} does not match compiled shape {:?}",
            input.shape(),
            net.spec.input_shape
        )));
    }
    Ok(())
}

/// Runs one inference: presents `input` for `cfg.t_steps` steps and returns
/// the accumulated output-layer membranes. State is private to the call, so
/// inference is a pure function of (weights, input, cfg).
pub fn infer(net: &Network, input: &Tensor, cfg: &RunConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_input(net, input)?;
    let mut state = NeuronState::new(net, net.spec.input_shape)?;
    for _ in 0..cfg.t_steps {
        step_once(net, input, &mut state, None)?;
    }
    readout(net, &state)
}

/// One pipelined stream sample: the decoded output and the global step index
/// at which it becomes available.
#[derive(Debug, Clone)]
pub struct StreamSample {
    pub index: usize,
    pub readout_step: usize,
    pub output: Tensor,
}

/// Models pipelined execution over a sample sequence. Output values equal
/// per-sample [`infer`]; with the offset enabled, sample `k` is read out at
/// global step `k * reset_interval + N + 2` where `N` is the deployed layer
/// count, otherwise at step `k * reset_interval + t_steps`.
pub fn infer_stream(
    net: &Network,
    inputs: &[Tensor],
    cfg: &RunConfig,
) -> Result<Vec<StreamSample>> {
    cfg.validate()?;
    let n_layers = net.spec.deployed_layer_count();
    let mut out = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let output = infer(net, input, cfg)?;
        let readout_step = if cfg.readout_offset_enabled {
            k * cfg.reset_interval + n_layers + 2
        } else {
            k * cfg.reset_interval + cfg.t_steps
        };
        out.push(StreamSample {
            index: k,
            readout_step,
            output,
        });
    }
    Ok(out)
}

/// Runs `inputs` through the network recording per-neuron spike counts and
/// conv synapse activity; returns the per-sample outputs alongside the trace.
/// Samples execute in independent contexts (parallel when enabled) and merge
/// in sample order, so the result is deterministic.
pub fn record_trace(
    net: &Network,
    inputs: &[Tensor],
    cfg: &RunConfig,
) -> Result<(Vec<Tensor>, SpikeTrace)> {
    cfg.validate()?;
    for input in inputs {
        check_input(net, input)?;
    }
    let shapes = net.spec.layer_shapes(net.spec.input_shape)?;

    let run_one = |input: &Tensor| -> Result<(Tensor, TraceAccum)> {
        let mut accum = new_accum(net, &shapes);
        let mut state = NeuronState::new(net, net.spec.input_shape)?;
        let mut last = Tensor::zeros(&[1]);
        for _ in 0..cfg.t_steps {
            last = step_once(net, input, &mut state, Some(&mut accum))?;
        }
        let _ = last;
        Ok((readout(net, &state)?, accum))
    };

    #[cfg(feature = "parallel")]
    let per_sample: Vec<(Tensor, TraceAccum)> =
        inputs.par_iter().map(run_one).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_sample: Vec<(Tensor, TraceAccum)> =
        inputs.iter().map(run_one).collect::<Result<Vec<_>>>()?;

    let mut merged = new_accum(net, &shapes);
    let mut outputs = Vec::with_capacity(per_sample.len());
    for (output, accum) in per_sample {
        outputs.push(output);
        for (dst, src) in merged.lif.iter_mut().zip(&accum.lif) {
            for (d, s) in dst.spike_counts.iter_mut().zip(&src.spike_counts) {
                *d += s;
            }
        }
        for (dst, src) in merged.source_active.iter_mut().zip(&accum.source_active) {
            for (d, s) in dst.1.iter_mut().zip(&src.1) {
                *d |= s;
            }
        }
    }

    let conv_layers = merged
        .source_active
        .iter()
        .map(|(layer_index, flags)| {
            let (spec, in_shape) = conv_at(net, *layer_index, &shapes);
            synapse_counts(*layer_index, &spec, in_shape, flags)
        })
        .collect();

    Ok((
        outputs,
        SpikeTrace {
            samples: inputs.len(),
            timesteps: cfg.t_steps,
            lif_layers: merged.lif,
            conv_layers,
        },
    ))
}

fn new_accum(net: &Network, shapes: &[[usize; 3]]) -> TraceAccum {
    let mut lif = Vec::new();
    let mut source_active = Vec::new();
    for (i, layer) in net.spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Lif(l) => lif.push(LayerTrace {
                layer_index: i,
                spiking: l.spiking,
                spike_counts: vec![0; shapes[i].iter().product()],
            }),
            LayerSpec::Conv2d(_) | LayerSpec::RepVgg(_) => {
                let in_shape = if i == 0 {
                    net.spec.input_shape
                } else {
                    shapes[i - 1]
                };
                source_active.push((i, vec![false; in_shape.iter().product()]));
            }
            _ => {}
        }
    }
    TraceAccum { lif, source_active }
}

fn conv_at(
    net: &Network,
    layer_index: usize,
    shapes: &[[usize; 3]],
) -> (crate::model::ConvSpec, [usize; 3]) {
    let in_shape = if layer_index == 0 {
        net.spec.input_shape
    } else {
        shapes[layer_index - 1]
    };
    let spec = match &net.spec.layers[layer_index] {
        LayerSpec::Conv2d(c) => *c,
        LayerSpec::RepVgg(r) => r.fused_conv(),
        _ => unreachable!("conv trace entry points at a non-conv layer"),
    };
    (spec, in_shape)
}

/// Counts (source element -> output element) connections of a conv stage.
/// Zero-padding taps are not synapses. A source element's fan-out is the
/// number of (output position, kernel tap) pairs that read it, times the
/// output channel count.
fn synapse_counts(
    layer_index: usize,
    spec: &crate::model::ConvSpec,
    in_shape: [usize; 3],
    active: &[bool],
) -> SynapseTrace {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (oh, ow) = spec
        .output_hw(h, w)
        .expect("shapes were validated before tracing");
    let count_dim = |pos: usize, k: usize, s: usize, p: usize, out_dim: usize| -> u64 {
        let mut n = 0u64;
        for tap in 0..k {
            let shifted = pos + p;
            if shifted < tap {
                continue;
            }
            let rem = shifted - tap;
            if rem.is_multiple_of(s) && rem / s < out_dim {
                n += 1;
            }
        }
        n
    };
    let fan_y: Vec<u64> = (0..h)
        .map(|y| count_dim(y, spec.kernel, spec.stride, spec.padding, oh))
        .collect();
    let fan_x: Vec<u64> = (0..w)
        .map(|x| count_dim(x, spec.kernel, spec.stride, spec.padding, ow))
        .collect();

    let mut total = 0u64;
    let mut active_count = 0u64;
    for c in 0..in_shape[0] {
        for y in 0..h {
            for x in 0..w {
                let fan = fan_y[y] * fan_x[x] * spec.out_ch as u64;
                total += fan;
                if active[(c * h + y) * w + x] {
                    active_count += fan;
                }
            }
        }
    }
    SynapseTrace {
        layer_index,
        total_synapses: total,
        active_synapses: active_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::weights::WeightSet;
    use crate::model::{ConvSpec, LifSpec, NetworkSpec, V_TH_OUTPUT};

    fn identity_conv(ch: usize) -> (LayerSpec, Tensor) {
        let mut w = vec![0.0f32; ch * ch];
        for c in 0..ch {
            w[c * ch + c] = 1.0;
        }
        (
            LayerSpec::Conv2d(ConvSpec {
                in_ch: ch,
                out_ch: ch,
                kernel: 1,
                stride: 1,
                padding: 0,
                has_bias: false,
            }),
            Tensor::from_f32(&[ch, ch, 1, 1], w).unwrap(),
        )
    }

    fn single_layer_net(tau: f32, spiking: bool, v_th: f32) -> Network {
        let (conv, w) = identity_conv(1);
        let spec = NetworkSpec {
            name: String::new(),
            input_shape: [1, 2, 2],
            layers: vec![conv, LayerSpec::Lif(LifSpec { v_th, tau, spiking })],
        };
        Network::new(spec, WeightSet::new(vec![w])).unwrap()
    }

    #[test]
    fn lif_zero_input_stays_zero() {
        let mut v = vec![0.0f32; 4];
        let mut spikes = vec![0.0f32; 4];
        lif_step(&mut v, &[0.0; 4], 1.0, 2.0, true, &mut spikes);
        assert!(v.iter().all(|&x| x == 0.0));
        assert!(spikes.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn lif_fires_every_step_at_threshold_drive() {
        let mut v = vec![0.0f32];
        let mut spikes = vec![0.0f32];
        for _ in 0..5 {
            lif_step(&mut v, &[1.0], 1.0, 1.0, true, &mut spikes);
            assert_eq!(spikes[0], 1.0);
            assert_eq!(v[0], 0.0, "hard reset leaves the membrane at exactly 0");
        }
    }

    #[test]
    fn lif_subthreshold_geometric_series() {
        // v_t = c (1 - (1 - 1/tau)^t) for constant input c
        let (c, tau) = (0.5f32, 2.0f32);
        let mut v = vec![0.0f32];
        let mut spikes = vec![0.0f32];
        for t in 1..=20 {
            lif_step(&mut v, &[c], 1.0, tau, true, &mut spikes);
            let want = c * (1.0 - (1.0 - 1.0 / tau).powi(t));
            assert!((v[0] - want).abs() < 1e-6, "step {t}: {} vs {want}", v[0]);
            assert_eq!(spikes[0], 0.0, "0.5 (1 - 0.5^t) < 1 never crosses");
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let net = single_layer_net(2.0, false, V_TH_OUTPUT);
        let out = infer(&net, &Tensor::zeros(&[1, 2, 2]), &RunConfig::default()).unwrap();
        assert!(out.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_membrane_accumulates_t_times_drive() {
        let net = single_layer_net(1.0, false, V_TH_OUTPUT);
        let input = Tensor::from_f32(&[1, 2, 2], vec![0.3; 4]).unwrap();
        let cfg = RunConfig {
            tau: 1.0,
            ..RunConfig::default()
        };
        let out = infer(&net, &input, &cfg).unwrap();
        for &v in out.as_f32().unwrap() {
            assert!((v - 7.0 * 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn inference_is_stateless_across_resets() {
        let net = single_layer_net(2.0, false, V_TH_OUTPUT);
        let input = Tensor::from_f32(&[1, 2, 2], vec![0.9, -0.2, 0.0, 2.5]).unwrap();
        let cfg = RunConfig::default();
        let a = infer(&net, &input, &cfg).unwrap();
        let b = infer(&net, &input, &cfg).unwrap();
        assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap());
    }

    #[test]
    fn run_config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig {
            reset_interval: 6,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            reset_interval: 1,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            t_steps: 8,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn stream_offsets_and_equivalence() {
        let net = single_layer_net(2.0, false, V_TH_OUTPUT);
        let inputs: Vec<Tensor> = (0..3)
            .map(|i| Tensor::from_f32(&[1, 2, 2], vec![i as f32 * 0.1; 4]).unwrap())
            .collect();
        let cfg = RunConfig {
            readout_offset_enabled: true,
            ..RunConfig::default()
        };
        let stream = infer_stream(&net, &inputs, &cfg).unwrap();
        // N = 1 deployed layer: sample k reads out at 8k + 3
        assert_eq!(stream[0].readout_step, 3);
        assert_eq!(stream[1].readout_step, 11);
        for (k, s) in stream.iter().enumerate() {
            let direct = infer(&net, &inputs[k], &cfg).unwrap();
            assert_eq!(s.output.as_f32().unwrap(), direct.as_f32().unwrap());
        }

        let cfg_off = RunConfig::default();
        let stream = infer_stream(&net, &inputs, &cfg_off).unwrap();
        assert_eq!(stream[0].readout_step, 7);
        assert_eq!(stream[2].readout_step, 2 * 8 + 7);
    }

    #[test]
    fn trace_zero_input_is_silent() {
        let net = single_layer_net(2.0, false, V_TH_OUTPUT);
        let (_, trace) =
            record_trace(&net, &[Tensor::zeros(&[1, 2, 2])], &RunConfig::default()).unwrap();
        assert_eq!(trace.total_spikes(), 0);
        assert!(trace.conv_layers.iter().all(|c| c.active_synapses == 0));
    }

    #[test]
    fn trace_counts_one_spike_per_neuron() {
        // super-threshold drive, one decode step: every neuron fires once
        let (conv, w) = identity_conv(1);
        let spec = NetworkSpec {
            name: String::new(),
            input_shape: [1, 2, 2],
            layers: vec![
                conv,
                LayerSpec::Lif(LifSpec {
                    v_th: 1.0,
                    tau: 1.0,
                    spiking: true,
                }),
                identity_conv(1).0,
                LayerSpec::Lif(LifSpec {
                    v_th: V_TH_OUTPUT,
                    tau: 2.0,
                    spiking: false,
                }),
            ],
        };
        let net = Network::new(spec, WeightSet::new(vec![w, identity_conv(1).1])).unwrap();
        let cfg = RunConfig {
            t_steps: 1,
            reset_interval: 2,
            ..RunConfig::default()
        };
        let input = Tensor::from_f32(&[1, 2, 2], vec![2.0; 4]).unwrap();
        let (_, trace) = record_trace(&net, &[input], &cfg).unwrap();
        let hidden = &trace.lif_layers[0];
        assert!(hidden.spiking);
        assert!(hidden.spike_counts.iter().all(|&s| s == 1));
        // output layer records zero spikes
        assert!(trace.lif_layers[1].spike_counts.iter().all(|&s| s == 0));
        assert!(!trace.lif_layers[1].spiking);
    }

    #[test]
    fn single_spiking_pixel_fanout() {
        // conv1 (1x1 identity) -> spiking LIF -> conv2 (3x3, 2 out channels)
        let (conv1, w1) = identity_conv(1);
        let conv2 = LayerSpec::Conv2d(ConvSpec {
            in_ch: 1,
            out_ch: 2,
            kernel: 3,
            stride: 1,
            padding: 1,
            has_bias: false,
        });
        let w2 = Tensor::from_f32(&[2, 1, 3, 3], vec![0.01; 18]).unwrap();
        let spec = NetworkSpec {
            name: String::new(),
            input_shape: [1, 5, 5],
            layers: vec![
                conv1,
                LayerSpec::Lif(LifSpec {
                    v_th: 1.0,
                    tau: 1.0,
                    spiking: true,
                }),
                conv2,
                LayerSpec::Lif(LifSpec {
                    v_th: V_TH_OUTPUT,
                    tau: 2.0,
                    spiking: false,
                }),
            ],
        };
        let net = Network::new(spec, WeightSet::new(vec![w1, w2])).unwrap();
        // only the center pixel crosses threshold
        let mut data = vec![0.0f32; 25];
        data[12] = 1.0;
        let input = Tensor::from_f32(&[1, 5, 5], data).unwrap();
        let (_, trace) = record_trace(&net, &[input], &RunConfig::default()).unwrap();

        let conv2_trace = trace
            .conv_layers
            .iter()
            .find(|c| c.layer_index == 2)
            .unwrap();
        // interior pixel of a 3x3/s1/p1 conv feeds 9 positions per out channel
        assert_eq!(conv2_trace.active_synapses, 9 * 2);

        // total synapses: every (output position, valid tap) pair, both channels
        let conv1_trace = &trace.conv_layers[0];
        assert_eq!(conv1_trace.total_synapses, 25);
        assert_eq!(conv1_trace.active_synapses, 1);
    }

    #[test]
    fn corner_pixel_has_reduced_fanout() {
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
            has_bias: false,
        };
        let mut active = vec![false; 25];
        active[0] = true; // corner (0,0)
        let t = synapse_counts(0, &spec, [1, 5, 5], &active);
        assert_eq!(
            t.active_synapses, 4,
            "corner reaches only 2x2 output positions"
        );
    }
}
