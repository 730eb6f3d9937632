//! Regenerates the reference network specs under `configs/` and the power
//! profiles that accompany them. The JSON files are the editable source of
//! truth; this generator just keeps them well-formed after bulk edits.
//!
//! Run from the workspace root: `cargo run -p spikedet-core --example make_configs`

use spikedet_core::model::{ConvSpec, LayerSpec, LifSpec, NetworkSpec, RepVggSpec};
use std::fs;
use std::path::Path;

fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv2d(ConvSpec {
        in_ch,
        out_ch,
        kernel,
        stride,
        padding,
        has_bias: false,
    })
}

fn bn(channels: usize) -> LayerSpec {
    LayerSpec::BatchNorm {
        channels,
        epsilon: 1e-5,
    }
}

fn lif() -> LayerSpec {
    LayerSpec::Lif(LifSpec {
        v_th: 1.0,
        tau: 2.0,
        spiking: true,
    })
}

fn lif_out() -> LayerSpec {
    LayerSpec::Lif(LifSpec {
        v_th: 2048.0,
        tau: 2.0,
        spiking: false,
    })
}

/// conv -> BN -> LIF block
fn block(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Vec<LayerSpec> {
    vec![
        conv(in_ch, out_ch, kernel, stride, kernel / 2),
        bn(out_ch),
        lif(),
    ]
}

/// Downsampling trunk in the YOLOv3-tiny lineage, pooling replaced by
/// stride-2 convs. 2-channel event-histogram input, 2-class head (22 ch).
fn model1() -> NetworkSpec {
    let mut layers = Vec::new();
    layers.extend(block(2, 16, 3, 2));
    layers.extend(block(16, 32, 3, 2));
    layers.extend(block(32, 64, 3, 2));
    layers.extend(block(64, 128, 3, 2));
    layers.extend(block(128, 256, 3, 1));
    layers.extend(block(256, 512, 3, 1));
    layers.extend(block(512, 256, 1, 1));
    layers.push(conv(256, 22, 1, 1, 0));
    layers.push(lif_out());
    NetworkSpec {
        name: "model1".into(),
        input_shape: [2, 192, 256],
        layers,
    }
}

/// Early residual (RepVGG) blocks with reduced channels, then the deeper
/// trunk. 2-channel event-histogram input, 2-class head.
fn model2() -> NetworkSpec {
    let mut layers = vec![
        LayerSpec::RepVgg(RepVggSpec {
            in_ch: 2,
            out_ch: 24,
            stride: 2,
            has_one_by_one: true,
            has_identity: false,
            epsilon: 1e-5,
        }),
        lif(),
        LayerSpec::RepVgg(RepVggSpec {
            in_ch: 24,
            out_ch: 24,
            stride: 1,
            has_one_by_one: true,
            has_identity: true,
            epsilon: 1e-5,
        }),
        lif(),
    ];
    layers.extend(block(24, 48, 3, 2));
    layers.extend(block(48, 96, 3, 2));
    layers.extend(block(96, 192, 3, 2));
    layers.extend(block(192, 192, 3, 1));
    layers.push(conv(192, 22, 1, 1, 0));
    layers.push(lif_out());
    NetworkSpec {
        name: "model2".into(),
        input_shape: [2, 192, 256],
        layers,
    }
}

/// Reconstructor-encoder shape: 5x5 strided encoder stages plus three extra
/// convs. 3-channel voxel input, 2-class head.
fn model3() -> NetworkSpec {
    let mut layers = Vec::new();
    layers.extend(block(3, 32, 5, 2));
    layers.extend(block(32, 64, 5, 2));
    layers.extend(block(64, 128, 5, 2));
    layers.extend(block(128, 256, 5, 2));
    layers.extend(block(256, 256, 3, 1));
    layers.extend(block(256, 256, 3, 1));
    layers.extend(block(256, 128, 3, 1));
    layers.push(conv(128, 22, 1, 1, 0));
    layers.push(lif_out());
    NetworkSpec {
        name: "model3".into(),
        input_shape: [3, 192, 256],
        layers,
    }
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    fs::create_dir_all(&root).unwrap();
    for spec in [model1(), model2(), model3()] {
        let path = root.join(format!("{}.json", spec.name));
        fs::write(&path, spec.to_json().unwrap()).unwrap();
        let n = spikedet_core::model::count_neurons(&spec, spec.input_shape).unwrap();
        let p = spikedet_core::model::count_params(&spec);
        println!(
            "{}: {} neurons @ {:?}, {} params",
            spec.name, n, spec.input_shape, p
        );
    }

    // measured board power per (model, dataset) cell
    let power = [
        ("model1", "evcivil-ev", 1.71, 0.38),
        ("model1", "evcivil-fr", 1.81, 0.35),
        ("model1", "pascal-voc", 1.71, 0.34),
        ("model1", "gen1", 1.83, 0.37),
        ("model2", "evcivil-ev", 1.72, 0.67),
        ("model2", "evcivil-fr", 1.74, 0.82),
        ("model2", "pascal-voc", 1.74, 0.71),
        ("model2", "gen1", 1.70, 0.77),
        ("model3", "evcivil-ev", 1.74, 0.50),
        ("model3", "gen1", 1.74, 0.64),
    ];
    let pdir = root.join("power");
    fs::create_dir_all(&pdir).unwrap();
    for (model, dataset, static_w, dynamic_w) in power {
        let profile = spikedet_core::profiler::PowerProfile {
            platform: "loihi2-oheo-gulch".into(),
            static_w,
            dynamic_w,
        };
        let path = pdir.join(format!("{model}_{dataset}.json"));
        fs::write(&path, serde_json::to_string_pretty(&profile).unwrap()).unwrap();
    }
    println!("wrote {} power profiles", power.len());
}
