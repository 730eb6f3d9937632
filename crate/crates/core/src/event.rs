//! Event-stream ingestion and tensor encodings.
//!
//! Raw sensor events arrive as `(t, x, y, polarity)` records inside a
//! time-bounded window. Two encodings feed the networks: a 2-channel
//! per-polarity count histogram and a B-bin voxel grid that splits each
//! event's unit mass across adjacent temporal bins by linear interpolation.
//! Frames are normalized to `[0, 1]` channel-first tensors.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Magic bytes of the EVT1 container.
pub const EVT1_MAGIC: [u8; 4] = *b"EVT1";
/// Fixed header size: magic + width + height + t_start + t_end.
pub const EVT1_HEADER_LEN: usize = 4 + 2 + 2 + 8 + 8;
/// Fixed record size: t(u64) + x(u16) + y(u16) + polarity(u8) + 3 pad bytes.
pub const EVT1_RECORD_LEN: usize = 16;

/// A single sensor event. Timestamps are microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// 0 = brightness decrease, 1 = brightness increase.
    pub polarity: u8,
}

/// A time-bounded window of events, sorted non-decreasing by timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    events: Vec<Event>,
    pub t_start: u64,
    pub t_end: u64,
    pub sensor_width: u16,
    pub sensor_height: u16,
}

impl EventWindow {
    /// Validates bounds and polarity, then stably re-sorts by timestamp so
    /// downstream accumulation order is canonical.
    pub fn new(
        mut events: Vec<Event>,
        t_start: u64,
        t_end: u64,
        sensor_width: u16,
        sensor_height: u16,
    ) -> Result<Self> {
        if t_end < t_start {
            return Err(Error::Parse(format!(
                "window bounds reversed: t_start={t_start} > t_end={t_end}"
            )));
        }
        if sensor_width == 0 || sensor_height == 0 {
            return Err(Error::Parse("sensor dimensions must be nonzero".into()));
        }
        for (i, ev) in events.iter().enumerate() {
            if ev.x >= sensor_width || ev.y >= sensor_height {
                return Err(Error::Parse(format!(
                    "event {i}: coordinate ({}, {}) outside sensor {}x{}",
                    ev.x, ev.y, sensor_width, sensor_height
                )));
            }
            if ev.polarity > 1 {
                return Err(Error::Parse(format!(
                    "event {i}: polarity {} is not binary",
                    ev.polarity
                )));
            }
            if ev.t < t_start || ev.t > t_end {
                return Err(Error::Parse(format!(
                    "event {i}: t={} outside window [{t_start}, {t_end}]",
                    ev.t
                )));
            }
        }
        events.sort_by_key(|e| e.t);
        Ok(Self {
            events,
            t_start,
            t_end,
            sensor_width,
            sensor_height,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Splits a long stream into consecutive fixed-length windows of
    /// `window_us` microseconds. The final window absorbs the remainder up to
    /// and including `t_end`.
    pub fn slice(&self, window_us: u64) -> Result<Vec<EventWindow>> {
        if window_us == 0 {
            return Err(Error::InvalidArgument("window length must be > 0".into()));
        }
        let span = self.t_end - self.t_start;
        let n = span.div_ceil(window_us).max(1) as usize;
        let mut buckets: Vec<Vec<Event>> = vec![Vec::new(); n];
        for ev in &self.events {
            let k = (((ev.t - self.t_start) / window_us) as usize).min(n - 1);
            buckets[k].push(*ev);
        }
        buckets
            .into_iter()
            .enumerate()
            .map(|(k, events)| {
                let start = self.t_start + k as u64 * window_us;
                let end = if k + 1 == n {
                    self.t_end
                } else {
                    start + window_us
                };
                EventWindow::new(events, start, end, self.sensor_width, self.sensor_height)
            })
            .collect()
    }
}

/// Parses an EVT1 byte stream. Events are re-sorted by timestamp if the file
/// order disagrees.
pub fn parse_events(bytes: &[u8]) -> Result<EventWindow> {
    if bytes.len() < EVT1_HEADER_LEN {
        return Err(Error::Parse(format!(
            "truncated header: {} bytes, need {EVT1_HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[0..4] != EVT1_MAGIC {
        return Err(Error::Parse("bad magic, expected EVT1".into()));
    }
    let width = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    let height = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
    let t_start = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let t_end = u64::from_le_bytes(bytes[16..24].try_into().unwrap());

    let payload = &bytes[EVT1_HEADER_LEN..];
    if !payload.len().is_multiple_of(EVT1_RECORD_LEN) {
        return Err(Error::Parse(format!(
            "payload of {} bytes is not a multiple of the {EVT1_RECORD_LEN}-byte record size",
            payload.len()
        )));
    }
    let mut events = Vec::with_capacity(payload.len() / EVT1_RECORD_LEN);
    for rec in payload.chunks_exact(EVT1_RECORD_LEN) {
        events.push(Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            polarity: rec[12],
        });
    }
    EventWindow::new(events, t_start, t_end, width, height)
}

/// Serializes a window to canonical EVT1 bytes (sorted order, zero padding).
pub fn serialize_events(window: &EventWindow) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVT1_HEADER_LEN + window.len() * EVT1_RECORD_LEN);
    out.extend_from_slice(&EVT1_MAGIC);
    out.extend_from_slice(&window.sensor_width.to_le_bytes());
    out.extend_from_slice(&window.sensor_height.to_le_bytes());
    out.extend_from_slice(&window.t_start.to_le_bytes());
    out.extend_from_slice(&window.t_end.to_le_bytes());
    for ev in window.events() {
        out.extend_from_slice(&ev.t.to_le_bytes());
        out.extend_from_slice(&ev.x.to_le_bytes());
        out.extend_from_slice(&ev.y.to_le_bytes());
        out.push(ev.polarity);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

/// 2-channel histogram: channel 0 counts positive events per pixel, channel 1
/// negative. Counts are stored as f32 and stay exact below 2^24.
pub fn encode_histogram(window: &EventWindow) -> Tensor {
    let h = window.sensor_height as usize;
    let w = window.sensor_width as usize;
    let mut data = vec![0.0f32; 2 * h * w];
    for ev in window.events() {
        let ch = if ev.polarity == 1 { 0 } else { 1 };
        data[(ch * h + ev.y as usize) * w + ev.x as usize] += 1.0;
    }
    Tensor::from_f32(&[2, h, w], data).expect("histogram shape is consistent")
}

/// Voxel-grid encoding over `bins` temporal bins. Each event's timestamp is
/// normalized to `t* = (B-1)(t - t_start)/(t_end - t_start)` and its unit mass
/// split between the two adjacent bins with weights `1 - |t* - b|`.
///
/// With `signed`, positive events contribute +1 and negative events -1;
/// the default accumulates both polarities unsigned. A degenerate window
/// (`t_end == t_start`) maps every event to bin 0 with weight 1.
pub fn encode_voxel(window: &EventWindow, bins: usize, signed: bool) -> Result<Tensor> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be >= 1".into()));
    }
    let h = window.sensor_height as usize;
    let w = window.sensor_width as usize;
    let mut grid = vec![0.0f64; bins * h * w];
    let span = (window.t_end - window.t_start) as f64;
    for ev in window.events() {
        let sign = if signed && ev.polarity == 0 {
            -1.0
        } else {
            1.0
        };
        let t_norm = if span == 0.0 || bins == 1 {
            0.0
        } else {
            (bins - 1) as f64 * (ev.t - window.t_start) as f64 / span
        };
        let lo = t_norm.floor() as usize;
        let frac = t_norm - lo as f64;
        let base = ev.y as usize * w + ev.x as usize;
        grid[lo * h * w + base] += sign * (1.0 - frac);
        if frac > 0.0 && lo + 1 < bins {
            grid[(lo + 1) * h * w + base] += sign * frac;
        }
    }
    Tensor::from_f32(&[bins, h, w], grid.into_iter().map(|v| v as f32).collect())
}

/// Normalizes an interleaved HxWxC 8-bit image to a channel-first tensor in
/// `[0, 1]` by dividing by 255.
pub fn normalize_frame(
    pixels: &[u8],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Tensor> {
    if pixels.len() != height * width * channels {
        return Err(Error::ShapeMismatch(format!(
            "image buffer of {} bytes does not match {height}x{width}x{channels}",
            pixels.len()
        )));
    }
    let mut data = vec![0.0f32; channels * height * width];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                data[(c * height + y) * width + x] =
                    pixels[(y * width + x) * channels + c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_f32(&[channels, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(events: Vec<Event>, t_start: u64, t_end: u64) -> EventWindow {
        EventWindow::new(events, t_start, t_end, 8, 6).unwrap()
    }

    #[test]
    fn parse_empty_payload_with_valid_header() {
        let w = window(vec![], 0, 1000);
        let parsed = parse_events(&serialize_events(&w)).unwrap();
        assert_eq!(parsed.len(), 0);
        assert_eq!(parsed, w);
    }

    #[test]
    fn parse_single_record() {
        let ev = Event {
            t: 5,
            x: 3,
            y: 2,
            polarity: 1,
        };
        let w = window(vec![ev], 0, 10);
        let parsed = parse_events(&serialize_events(&w)).unwrap();
        assert_eq!(parsed.events(), &[ev]);
    }

    #[test]
    fn parse_rejects_malformed_input() {
        let w = window(vec![], 0, 10);
        let mut bytes = serialize_events(&w);
        bytes[0] = b'X';
        assert!(parse_events(&bytes).is_err(), "bad magic");

        let mut bytes = serialize_events(&w);
        bytes.push(0);
        assert!(parse_events(&bytes).is_err(), "ragged record");

        assert!(parse_events(&[0u8; 10]).is_err(), "truncated header");

        // coordinate outside declared sensor bounds
        let ev = Event {
            t: 1,
            x: 7,
            y: 5,
            polarity: 0,
        };
        let good = window(vec![ev], 0, 10);
        let mut bytes = serialize_events(&good);
        bytes[4] = 4; // shrink width below x=7
        assert!(parse_events(&bytes).is_err());
    }

    #[test]
    fn out_of_window_timestamps_are_rejected_not_clamped() {
        let ev = Event {
            t: 50,
            x: 0,
            y: 0,
            polarity: 1,
        };
        assert!(EventWindow::new(vec![ev], 0, 10, 8, 6).is_err());
    }

    #[test]
    fn histogram_counts_per_polarity() {
        let empty = window(vec![], 0, 100);
        assert_eq!(encode_histogram(&empty).sum(), 0.0);

        let ev = |t| Event {
            t,
            x: 5,
            y: 2,
            polarity: 1,
        };
        let w = window(vec![ev(1), ev(2), ev(3)], 0, 100);
        let hist = encode_histogram(&w);
        assert_eq!(hist.get3(0, 2, 5), 3.0);
        assert_eq!(hist.sum(), 3.0);

        let neg = Event {
            t: 0,
            x: 0,
            y: 0,
            polarity: 0,
        };
        let w = window(vec![neg], 0, 100);
        let hist = encode_histogram(&w);
        assert_eq!(hist.get3(1, 0, 0), 1.0);
        assert_eq!(hist.get3(0, 0, 0), 0.0);
    }

    #[test]
    fn voxel_boundary_and_midpoint_bins() {
        let ev = |t| Event {
            t,
            x: 1,
            y: 1,
            polarity: 1,
        };
        // t = t_start -> bin 0, weight 1
        let w = window(vec![ev(0)], 0, 100);
        let v = encode_voxel(&w, 3, false).unwrap();
        assert_eq!(v.get3(0, 1, 1), 1.0);
        assert_eq!(v.sum(), 1.0);

        // t* = 0.5 -> 0.5 in bin 0 and bin 1 (t = 25 gives t* = 2*25/100)
        let w = window(vec![ev(25)], 0, 100);
        let v = encode_voxel(&w, 3, false).unwrap();
        assert_eq!(v.get3(0, 1, 1), 0.5);
        assert_eq!(v.get3(1, 1, 1), 0.5);

        // t = t_end -> bin 2, weight 1
        let w = window(vec![ev(100)], 0, 100);
        let v = encode_voxel(&w, 3, false).unwrap();
        assert_eq!(v.get3(2, 1, 1), 1.0);
    }

    #[test]
    fn voxel_degenerate_window_goes_to_bin_zero() {
        let ev = Event {
            t: 42,
            x: 2,
            y: 3,
            polarity: 0,
        };
        let w = window(vec![ev], 42, 42);
        let v = encode_voxel(&w, 4, false).unwrap();
        assert_eq!(v.get3(0, 3, 2), 1.0);
        assert_eq!(v.sum(), 1.0);
    }

    #[test]
    fn signed_voxel_subtracts_negative_polarity() {
        let pos = Event {
            t: 0,
            x: 0,
            y: 0,
            polarity: 1,
        };
        let neg = Event {
            t: 0,
            x: 0,
            y: 0,
            polarity: 0,
        };
        let w = window(vec![pos, neg], 0, 10);
        let v = encode_voxel(&w, 2, true).unwrap();
        assert_eq!(v.get3(0, 0, 0), 0.0);
    }

    #[test]
    fn frame_normalization_divides_by_255() {
        let t = normalize_frame(&[0, 128, 255], 1, 3, 1).unwrap();
        let vals = t.as_f32().unwrap();
        assert_eq!(vals[0], 0.0);
        assert_eq!(vals[2], 1.0);
        assert!((vals[1] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn frame_normalization_is_channel_first() {
        // 1x2 RGB image: pixel0 = (10, 20, 30), pixel1 = (40, 50, 60)
        let t = normalize_frame(&[10, 20, 30, 40, 50, 60], 1, 2, 3).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert!((t.get3(0, 0, 1) - 40.0 / 255.0).abs() < 1e-7);
        assert!((t.get3(2, 0, 0) - 30.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn slicing_assigns_events_to_fixed_windows() {
        let ev = |t| Event {
            t,
            x: 0,
            y: 0,
            polarity: 1,
        };
        let w = window(vec![ev(0), ev(99), ev(100), ev(250)], 0, 250);
        let slices = w.slice(100).unwrap();
        assert_eq!(slices.len(), 3);
        assert_eq!(slices[0].len(), 2);
        assert_eq!(slices[1].len(), 1);
        assert_eq!(slices[2].len(), 1);
        assert_eq!(slices[2].t_end, 250);
    }
}
