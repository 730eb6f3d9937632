//! Regenerates the small demo fixtures under `fixtures/demo/`: a synthetic
//! EVT1 event stream, a two-stage demo network with seeded weights, a run
//! manifest, and a matching ground-truth file.
//!
//! Run from the workspace root: `cargo run -p spikedet-core --example make_fixtures`

use spikedet_core::event::{serialize_events, Event, EventWindow};
use spikedet_core::model::weights::{expected_tensor_shapes, write_weight_set, WeightSet};
use spikedet_core::model::{ConvSpec, LayerSpec, LifSpec, NetworkSpec};
use spikedet_core::tensor::Tensor;
use std::fs;
use std::path::Path;

struct Rng(u64);

impl Rng {
    fn next_f32(&mut self) -> f32 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        ((self.0.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 40) as f64 / (1u64 << 24) as f64) as f32
            * 2.0
            - 1.0
    }

    fn below(&mut self, n: u64) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0.wrapping_mul(0x2545_F491_4F6C_DD1D) % n
    }
}

fn demo_spec() -> NetworkSpec {
    NetworkSpec {
        name: "demo-tiny".into(),
        input_shape: [2, 16, 16],
        layers: vec![
            LayerSpec::Conv2d(ConvSpec {
                in_ch: 2,
                out_ch: 8,
                kernel: 3,
                stride: 2,
                padding: 1,
                has_bias: false,
            }),
            LayerSpec::BatchNorm {
                channels: 8,
                epsilon: 1e-5,
            },
            LayerSpec::Lif(LifSpec {
                v_th: 1.0,
                tau: 2.0,
                spiking: true,
            }),
            LayerSpec::Conv2d(ConvSpec {
                in_ch: 8,
                out_ch: 22,
                kernel: 1,
                stride: 1,
                padding: 0,
                has_bias: false,
            }),
            LayerSpec::Lif(LifSpec {
                v_th: 2048.0,
                tau: 2.0,
                spiking: false,
            }),
        ],
    }
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo");
    fs::create_dir_all(dir.join("gt")).unwrap();

    // a bright moving blob over a 16x16 sensor, 100 ms window
    let mut rng = Rng(0x5EED_2024);
    let mut events = Vec::new();
    for i in 0..400u64 {
        let t = i * 250; // 0..100_000 us
        let cx = 4 + (i / 50) as i64; // drifts right
        let x = (cx + rng.below(5) as i64 - 2).clamp(0, 15) as u16;
        let y = (8 + rng.below(5) as i64 - 2).clamp(0, 15) as u16;
        let polarity = if rng.below(4) == 0 { 0 } else { 1 };
        events.push(Event { t, x, y, polarity });
    }
    let window = EventWindow::new(events, 0, 100_000, 16, 16).unwrap();
    fs::write(dir.join("sample.evt1"), serialize_events(&window)).unwrap();

    let spec = demo_spec();
    fs::write(dir.join("tiny_net.json"), spec.to_json().unwrap()).unwrap();

    let mut tensors = Vec::new();
    let mut conv_index = 0;
    for shape in expected_tensor_shapes(&spec) {
        let len: usize = shape.iter().product();
        let t = if shape.len() == 1 {
            // benign BN statistics: small mean, near-unit variance
            let ch = shape[0];
            let mut data = Vec::with_capacity(ch);
            for _ in 0..ch {
                data.push(rng.next_f32() * 0.1);
            }
            Tensor::from_f32(&shape, data).unwrap()
        } else if conv_index == 0 {
            // positive-leaning first stage so event counts drive spikes
            conv_index += 1;
            let data = (0..len)
                .map(|_| 0.05 + 0.15 * rng.next_f32().abs())
                .collect();
            Tensor::from_f32(&shape, data).unwrap()
        } else {
            conv_index += 1;
            let data = (0..len).map(|_| rng.next_f32() * 0.4).collect();
            Tensor::from_f32(&shape, data).unwrap()
        };
        tensors.push(t);
    }
    // make the BN variance tensor positive
    let weights = fix_bn_variances(&spec, tensors);
    fs::write(
        dir.join("tiny_net.snnw"),
        write_weight_set(&WeightSet::new(weights)).unwrap(),
    )
    .unwrap();

    // one ground-truth box roughly where the blob drifts
    fs::write(dir.join("gt/sample.txt"), "0 0.5 0.5 0.4 0.35\n").unwrap();

    let manifest = serde_json::json!({
        "spec": "fixtures/demo/tiny_net.json",
        "weights": "fixtures/demo/tiny_net.snnw",
        "input": "fixtures/demo/sample.evt1",
        "out_dir": "out/demo",
        "head": { "classes": 2, "reg_max": 5, "score_threshold": 0.6, "nms_iou": 0.5 },
        "trace": true
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
    println!("demo fixtures written to {}", dir.display());
}

/// BatchNorm bundles are (mean, var, gamma, beta); variances must be
/// positive for the spec to run.
fn fix_bn_variances(spec: &NetworkSpec, mut tensors: Vec<Tensor>) -> Vec<Tensor> {
    let mut idx = 0;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv2d(_) => idx += 1,
            LayerSpec::BatchNorm { channels, .. } => {
                let var = Tensor::from_f32(&[*channels], vec![1.0; *channels]).unwrap();
                tensors[idx + 1] = var;
                idx += 4;
            }
            LayerSpec::MeanOnlyBatchNorm { .. } => idx += 1,
            LayerSpec::Lif(_) => {}
            LayerSpec::RepVgg(r) => {
                idx += 5;
                if r.has_one_by_one {
                    idx += 5;
                }
                if r.has_identity {
                    idx += 4;
                }
            }
        }
    }
    tensors
}
