//! Criterion benches for the data-parallel hot paths against their
//! sequential twins: the convolution kernel, batch trace recording vs a
//! plain inference loop, plus encoder and evaluator throughput.
//!
//! Run with `cargo bench -p spikedet-core`. Building with
//! `--no-default-features` exercises the sequential fallback everywhere.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use spikedet_core::detect::{self, BBox, Detection, GroundTruth};
use spikedet_core::event::{encode_histogram, encode_voxel, Event, EventWindow};
use spikedet_core::model::weights::{expected_tensor_shapes, WeightSet};
use spikedet_core::model::{ops, ConvSpec, LayerSpec, LifSpec, Network, NetworkSpec};
use spikedet_core::runtime::{infer, record_trace, RunConfig};
use spikedet_core::tensor::Tensor;

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

    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_f32(shape, (0..len).map(|_| self.next_f32()).collect()).unwrap()
    }
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = Rng(0xC0DE);
    let mut group = c.benchmark_group("conv2d");
    for &(ch, size) in &[(16usize, 32usize), (32, 64)] {
        let spec = ConvSpec {
            in_ch: ch,
            out_ch: ch,
            kernel: 3,
            stride: 1,
            padding: 1,
            has_bias: false,
        };
        let input = rng.tensor(&[ch, size, size]);
        let weight = rng.tensor(&[ch, ch, 3, 3]);
        group.bench_with_input(
            BenchmarkId::new("seq", format!("{ch}x{size}x{size}")),
            &(),
            |b, _| b.iter(|| ops::conv2d_seq(black_box(&input), &spec, &weight).unwrap()),
        );
        #[cfg(feature = "parallel")]
        group.bench_with_input(
            BenchmarkId::new("par", format!("{ch}x{size}x{size}")),
            &(),
            |b, _| b.iter(|| ops::conv2d_par(black_box(&input), &spec, &weight).unwrap()),
        );
    }
    group.finish();
}

fn tiny_net(rng: &mut Rng) -> Network {
    let spec = NetworkSpec {
        name: "bench".into(),
        input_shape: [2, 48, 64],
        layers: vec![
            LayerSpec::Conv2d(ConvSpec {
                in_ch: 2,
                out_ch: 16,
                kernel: 3,
                stride: 2,
                padding: 1,
                has_bias: false,
            }),
            LayerSpec::BatchNorm {
                channels: 16,
                epsilon: 1e-5,
            },
            LayerSpec::Lif(LifSpec {
                v_th: 1.0,
                tau: 2.0,
                spiking: true,
            }),
            LayerSpec::Conv2d(ConvSpec {
                in_ch: 16,
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
    };
    let mut tensors = Vec::new();
    let mut slot = 0usize;
    for shape in expected_tensor_shapes(&spec) {
        if shape.len() == 1 {
            let v = match slot % 4 {
                1 | 2 => 1.0,
                _ => 0.0,
            };
            slot += 1;
            tensors.push(Tensor::from_f32(&shape, vec![v; shape[0]]).unwrap());
        } else {
            slot = 0;
            tensors.push(rng.tensor(&shape));
        }
    }
    Network::new(spec, WeightSet::new(tensors)).unwrap()
}

/// Batch processing: sample-parallel trace recording vs the equivalent
/// sequential inference loop.
fn bench_batch(c: &mut Criterion) {
    let mut rng = Rng(0xBA7C4);
    let net = tiny_net(&mut rng);
    let cfg = RunConfig::default();
    let inputs: Vec<Tensor> = (0..8)
        .map(|_| {
            let data = (0..2 * 48 * 64)
                .map(|_| rng.next_f32().abs() * 2.0)
                .collect();
            Tensor::from_f32(&[2, 48, 64], data).unwrap()
        })
        .collect();

    let mut group = c.benchmark_group("batch8");
    group.bench_function("sequential_infer_loop", |b| {
        b.iter(|| {
            for input in &inputs {
                black_box(infer(&net, input, &cfg).unwrap());
            }
        })
    });
    group.bench_function("record_trace", |b| {
        b.iter(|| black_box(record_trace(&net, &inputs, &cfg).unwrap()))
    });
    group.finish();
}

fn bench_encoders(c: &mut Criterion) {
    let mut rng = Rng(0xE7E27);
    let events: Vec<Event> = (0..50_000)
        .map(|i| Event {
            t: i as u64 * 2,
            x: (rng.next_f32().abs() * 239.0) as u16,
            y: (rng.next_f32().abs() * 179.0) as u16,
            polarity: (i % 2) as u8,
        })
        .collect();
    let window = EventWindow::new(events, 0, 100_000, 240, 180).unwrap();

    let mut group = c.benchmark_group("encode_50k_events");
    group.bench_function("histogram", |b| {
        b.iter(|| black_box(encode_histogram(&window)))
    });
    group.bench_function("voxel_b5", |b| {
        b.iter(|| black_box(encode_voxel(&window, 5, false).unwrap()))
    });
    group.finish();
}

fn bench_eval(c: &mut Criterion) {
    let mut rng = Rng(0xE5A1);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for _ in 0..50 {
        let mut img_gt = Vec::new();
        let mut img_det = Vec::new();
        for k in 0..20 {
            let x1 = rng.next_f32().abs() * 100.0;
            let y1 = rng.next_f32().abs() * 100.0;
            let b = BBox {
                x1,
                y1,
                x2: x1 + 5.0 + rng.next_f32().abs() * 20.0,
                y2: y1 + 5.0 + rng.next_f32().abs() * 20.0,
            };
            img_gt.push(GroundTruth {
                bbox: b,
                class_id: k % 3,
            });
            img_det.push(Detection {
                bbox: BBox {
                    x1: b.x1 + rng.next_f32() * 3.0,
                    y1: b.y1 + rng.next_f32() * 3.0,
                    x2: b.x2 + rng.next_f32() * 3.0,
                    y2: b.y2 + rng.next_f32() * 3.0,
                },
                class_id: k % 3,
                score: rng.next_f32().abs(),
            });
        }
        gts.push(img_gt);
        dets.push(img_det);
    }
    c.bench_function("eval_50_images", |b| {
        b.iter(|| black_box(detect::eval_detections(&dets, &gts, 0.5).unwrap()))
    });
}

criterion_group!(benches, bench_conv, bench_batch, bench_encoders, bench_eval);
criterion_main!(benches);
