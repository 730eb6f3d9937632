//! Property tests for the module invariants: encoding mass and order
//! invariance, container roundtrips, suppression guarantees, decode bounds,
//! quantization bounds, and loss linearity.

use proptest::prelude::*;

use spikedet_core::detect::{self, BBox, Detection, HeadConfig};
use spikedet_core::event::{
    encode_histogram, encode_voxel, parse_events, serialize_events, Event, EventWindow,
};
use spikedet_core::losses::{total_loss, DistillConfig, LossComponents};
use spikedet_core::tensor::Tensor;
use spikedet_core::transform::quantize_tensor;

fn arb_window() -> impl Strategy<Value = EventWindow> {
    (2u16..14, 2u16..10, 0u64..1_000, 0u64..20_000).prop_flat_map(|(w, h, t0, span)| {
        let t1 = t0 + span;
        prop::collection::vec((t0..=t1, 0..w, 0..h, 0u8..2), 0..120).prop_map(move |raw| {
            let events = raw
                .into_iter()
                .map(|(t, x, y, polarity)| Event { t, x, y, polarity })
                .collect();
            EventWindow::new(events, t0, t1, w, h).expect("generated within bounds")
        })
    })
}

/// A deterministic non-trivial permutation of the events.
fn permuted(window: &EventWindow) -> EventWindow {
    let mut events = window.events().to_vec();
    let n = events.len();
    if n > 1 {
        for i in 0..n {
            let j = (i * 7919 + 13) % n;
            events.swap(i, j);
        }
    }
    EventWindow::new(
        events,
        window.t_start,
        window.t_end,
        window.sensor_width,
        window.sensor_height,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn evt1_roundtrip_preserves_window(window in arb_window()) {
        let parsed = parse_events(&serialize_events(&window)).unwrap();
        prop_assert_eq!(parsed, window);
    }

    #[test]
    fn histogram_mass_equals_event_count(window in arb_window()) {
        let hist = encode_histogram(&window);
        prop_assert_eq!(hist.sum(), window.len() as f64);
    }

    #[test]
    fn voxel_mass_equals_event_count(window in arb_window(), bins in 1usize..6) {
        let voxel = encode_voxel(&window, bins, false).unwrap();
        let mass = voxel.sum();
        let want = window.len() as f64;
        prop_assert!((mass - want).abs() <= 1e-6 * want.max(1.0));
    }

    #[test]
    fn encodings_are_order_invariant(window in arb_window(), bins in 1usize..6) {
        let shuffled = permuted(&window);
        let (h1, h2) = (encode_histogram(&window), encode_histogram(&shuffled));
        prop_assert_eq!(h1.as_f32().unwrap(), h2.as_f32().unwrap());
        let v1 = encode_voxel(&window, bins, false).unwrap();
        let v2 = encode_voxel(&shuffled, bins, false).unwrap();
        prop_assert_eq!(v1.as_f32().unwrap(), v2.as_f32().unwrap());
    }

    #[test]
    fn single_bin_voxel_equals_polarity_summed_histogram(window in arb_window()) {
        let voxel = encode_voxel(&window, 1, false).unwrap();
        let hist = encode_histogram(&window);
        let h = window.sensor_height as usize;
        let w = window.sensor_width as usize;
        let hv = hist.as_f32().unwrap();
        for (i, &v) in voxel.as_f32().unwrap().iter().enumerate() {
            prop_assert_eq!(v, hv[i] + hv[h * w + i]);
        }
    }
}

fn arb_detections() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec(
        (
            0.0f32..60.0,
            0.0f32..60.0,
            1.0f32..25.0,
            1.0f32..25.0,
            0usize..3,
            0.0f32..1.0,
        ),
        0..40,
    )
    .prop_map(|raw| {
        raw.into_iter()
            .map(|(x1, y1, w, h, class_id, score)| Detection {
                bbox: BBox {
                    x1,
                    y1,
                    x2: x1 + w,
                    y2: y1 + h,
                },
                class_id,
                score,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn nms_keeps_a_separated_subset(dets in arb_detections(), thr in 0.1f32..0.9) {
        let kept = detect::nms(&dets, thr);
        prop_assert!(kept.len() <= dets.len());
        for k in &kept {
            prop_assert!(dets.iter().any(|d| d == k), "output must be a subset");
        }
        for (i, a) in kept.iter().enumerate() {
            for b in kept.iter().skip(i + 1) {
                if a.class_id == b.class_id {
                    prop_assert!(detect::iou(&a.bbox, &b.bbox) < thr);
                }
            }
        }
    }

    #[test]
    fn decoded_distances_stay_inside_bin_range(
        logits in prop::collection::vec(-8.0f32..8.0, 22),
    ) {
        let mut cfg = HeadConfig::new(2, 8);
        cfg.score_threshold = 0.0;
        let head = Tensor::from_f32(&[22, 1, 1], logits).unwrap();
        let dets = detect::decode(&head, &cfg).unwrap();
        let limit = (cfg.reg_max - 1) as f32 * cfg.stride as f32;
        let (cx, cy) = (4.0f32, 4.0f32);
        for d in dets {
            for dist in [cx - d.bbox.x1, cy - d.bbox.y1, d.bbox.x2 - cx, d.bbox.y2 - cy] {
                prop_assert!(dist >= -1e-4 && dist <= limit + 1e-4);
            }
        }
    }

    #[test]
    fn quantization_error_within_half_scale(
        values in prop::collection::vec(-50.0f32..50.0, 1..128),
    ) {
        let t = Tensor::from_f32(&[values.len()], values).unwrap();
        let (q, qp) = quantize_tensor(&t).unwrap();
        for (&orig, deq) in t.as_f32().unwrap().iter().zip(q.to_f32_vec()) {
            prop_assert!((orig - deq).abs() <= qp.scale / 2.0 + qp.scale * 1e-6);
        }
    }

    #[test]
    fn total_loss_is_linear_in_each_component(
        base in prop::collection::vec(0.0f64..10.0, 6),
        scale in 0.0f64..8.0,
        which in 0usize..6,
    ) {
        let cfg = DistillConfig::default();
        let mk = |v: &[f64]| LossComponents {
            box_loss: v[0],
            cls_loss: v[1],
            dfl_loss: v[2],
            cls_distill: v[3],
            dfl_distill: v[4],
            feat_distill: v[5],
        };
        let weights = [cfg.alpha, cfg.beta, cfg.gamma, cfg.theta, cfg.theta, cfg.eta];
        let mut scaled = base.clone();
        scaled[which] *= scale;
        let delta = total_loss(&mk(&scaled), &cfg) - total_loss(&mk(&base), &cfg);
        let want = weights[which] * base[which] * (scale - 1.0);
        prop_assert!((delta - want).abs() < 1e-9 * (1.0 + want.abs()));
    }
}
