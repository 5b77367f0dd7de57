//! Camera-to-center backhaul: bandwidth traces, normalized network condition,
//! the quality penalty and frame dropping under a token bucket.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens below a full frame by at most this relative amount still pay for it.
const TOKEN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSegment {
    /// Segment start, seconds.
    pub start: f64,
    /// Available rate, bytes/s. May be infinite.
    pub rate: f64,
}

/// Piecewise-constant available rate over `[0, duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTrace {
    segments: Vec<TraceSegment>,
    duration: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct TraceRow {
    t_start_s: f64,
    rate_bytes_per_s: f64,
}

impl LinkTrace {
    pub fn new(segments: Vec<TraceSegment>, duration: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("link trace: {m}")));
        if segments.is_empty() {
            return bad("no segments".into());
        }
        if segments[0].start != 0.0 {
            return bad(format!("first segment must start at 0, starts at {}", segments[0].start));
        }
        if segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return bad("segment starts must be strictly increasing".into());
        }
        if segments.iter().any(|s| !(s.rate >= 0.0) || !s.start.is_finite()) {
            return bad("rates must be nonnegative".into());
        }
        if !(duration > segments.last().unwrap().start) || !duration.is_finite() {
            return bad(format!("duration {duration} must exceed the last segment start"));
        }
        Ok(LinkTrace { segments, duration })
    }

    pub fn constant(rate: f64, duration: f64) -> Result<Self> {
        LinkTrace::new(vec![TraceSegment { start: 0.0, rate }], duration)
    }

    /// Good / limited / good: `limit` applies on `[window.0, window.1)`.
    pub fn limited(base: f64, limit: f64, window: (f64, f64), duration: f64) -> Result<Self> {
        let (a, b) = window;
        if !(0.0 <= a && a < b && b <= duration) {
            return Err(Error::InvalidArgument(format!(
                "limit window ({a}, {b}) must lie inside [0, {duration}]"
            )));
        }
        let mut segs = Vec::new();
        if a > 0.0 {
            segs.push(TraceSegment { start: 0.0, rate: base });
        }
        segs.push(TraceSegment { start: a, rate: limit });
        if b < duration {
            segs.push(TraceSegment { start: b, rate: base });
        }
        LinkTrace::new(segs, duration)
    }

    /// The limited middle third of a run.
    pub fn middle_third(base: f64, limit: f64, duration: f64) -> Result<Self> {
        LinkTrace::limited(base, limit, (duration / 3.0, 2.0 * duration / 3.0), duration)
    }

    pub fn segments(&self) -> &[TraceSegment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Segment boundaries after time zero.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    fn segment_index(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.segments[self.segment_index(t)].rate
    }

    /// Bytes that can be sent during `[t0, t1]`.
    pub fn bytes_between(&self, t0: f64, t1: f64) -> f64 {
        if !(t1 > t0) {
            return 0.0;
        }
        let mut total = 0.0;
        let first = self.segment_index(t0);
        for (k, seg) in self.segments.iter().enumerate().skip(first) {
            if seg.start >= t1 {
                break;
            }
            let end = self.segments.get(k + 1).map_or(f64::INFINITY, |n| n.start);
            let lo = t0.max(seg.start);
            let hi = t1.min(end);
            if hi > lo {
                total += seg.rate * (hi - lo);
            }
        }
        total
    }

    /// Mean rate over `[t0, t1]`; the instantaneous rate for an empty interval.
    pub fn mean_rate(&self, t0: f64, t1: f64) -> f64 {
        if t1 > t0 {
            self.bytes_between(t0, t1) / (t1 - t0)
        } else {
            self.rate_at(t0)
        }
    }

    /// Reads `t_start_s,rate_bytes_per_s` rows; the last segment extends to `duration`.
    pub fn read_csv<R: Read>(input: R, duration: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut segments = Vec::new();
        for row in rdr.deserialize() {
            let row: TraceRow = row.map_err(|e| Error::InvalidArgument(format!("trace csv: {e}")))?;
            segments.push(TraceSegment {
                start: row.t_start_s,
                rate: row.rate_bytes_per_s,
            });
        }
        LinkTrace::new(segments, duration)
    }

    pub fn load_csv(path: impl AsRef<Path>, duration: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::config(path, e))?;
        LinkTrace::read_csv(file, duration).map_err(|e| Error::config(path, e))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.segments {
            w.serialize(TraceRow {
                t_start_s: s.start,
                rate_bytes_per_s: s.rate,
            })
            .map_err(|e| Error::InvalidArgument(format!("trace csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `min(c, c_t) / c_t`.
pub fn penalty_factor(c: f64, c_t: f64) -> Result<f64> {
    if !(c_t > 0.0 && c_t <= 1.0) {
        return Err(Error::InvalidArgument(format!("condition threshold must be in (0,1], got {c_t}")));
    }
    Ok(c.clamp(0.0, 1.0).min(c_t) / c_t)
}

/// Normalized condition `c` measured over `[max(0, t - window), t]`.
pub fn measure_condition(trace: &LinkTrace, t: f64, window: f64, reference_rate: f64) -> f64 {
    let rate = trace.mean_rate((t - window).max(0.0), t);
    if rate.is_infinite() {
        return 1.0;
    }
    (rate / reference_rate).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkCondition {
    pub c: f64,
    pub c_t: f64,
    /// Bytes/s corresponding to `c = 1`.
    pub reference_rate: f64,
}

impl NetworkCondition {
    pub fn alpha(&self) -> Result<f64> {
        penalty_factor(self.c, self.c_t)
    }
}

/// Uncompressed frame size, bytes.
pub fn frame_bytes(width: usize, height: usize, channels: usize) -> f64 {
    (width * height * channels) as f64
}

/// Token bucket shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Bucket capacity in frames.
    pub bucket_frames: f64,
    /// Tokens present at the start, in frames.
    pub initial_frames: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            bucket_frames: 2.0,
            initial_frames: 1.0,
        }
    }
}

/// Frames surviving the link, with the quality bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedStream {
    /// Per source frame, whether it arrived.
    pub delivered: Vec<bool>,
    pub source_quality: f64,
    pub delivered_quality: f64,
}

impl DegradedStream {
    pub fn delivered_count(&self) -> usize {
        self.delivered.iter().filter(|&&d| d).count()
    }

    pub fn delivered_indices(&self) -> Vec<usize> {
        self.delivered.iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| i).collect()
    }

    pub fn delivered_fraction(&self) -> f64 {
        if self.delivered.is_empty() {
            1.0
        } else {
            self.delivered_count() as f64 / self.delivered.len() as f64
        }
    }
}

/// Sends `frame_count` frames captured at `fps` through `trace`.
///
/// Bytes accrue at the trace rate into a bucket holding at most
/// `bucket_frames` frames; a frame is delivered iff a whole frame's worth of
/// tokens is available at its capture instant, otherwise it is dropped.
pub fn transmit(
    frame_count: usize,
    fps: f64,
    size_bytes: f64,
    trace: &LinkTrace,
    params: ChannelParams,
    reference_rate: f64,
    c_t: f64,
) -> Result<DegradedStream> {
    if !(size_bytes > 0.0) || !(fps > 0.0) {
        return Err(Error::InvalidArgument("frame size and fps must be positive".into()));
    }
    let capacity = params.bucket_frames.max(1.0) * size_bytes;
    let mut tokens = (params.initial_frames * size_bytes).min(capacity);
    let mut delivered = Vec::with_capacity(frame_count);
    let mut prev_t = 0.0;
    for i in 0..frame_count {
        let t = i as f64 / fps;
        tokens = (tokens + trace.bytes_between(prev_t, t)).min(capacity);
        prev_t = t;
        if tokens >= size_bytes * (1.0 - TOKEN_SLACK) {
            tokens = (tokens - size_bytes).max(0.0);
            delivered.push(true);
        } else {
            delivered.push(false);
        }
    }
    let span = frame_count as f64 / fps;
    let c = measure_condition(trace, span, span, reference_rate);
    Ok(DegradedStream {
        delivered,
        source_quality: 1.0,
        delivered_quality: penalty_factor(c, c_t)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FB: f64 = 1000.0;

    fn send(rate: f64, n: usize) -> DegradedStream {
        let trace = LinkTrace::constant(rate, n as f64 / 15.0 + 1.0).unwrap();
        transmit(n, 15.0, FB, &trace, ChannelParams::default(), FB * 15.0, 1.0).unwrap()
    }

    #[test]
    fn penalty_cases() {
        assert_eq!(penalty_factor(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(penalty_factor(0.0, 0.3).unwrap(), 0.0);
        assert!((penalty_factor(0.15, 0.30).unwrap() - 0.5).abs() < 1e-12);
        assert!(penalty_factor(0.5, 0.0).is_err());
    }

    #[test]
    fn sufficient_rate_delivers_everything() {
        let s = send(FB * 15.0, 300);
        assert_eq!(s.delivered_count(), 300);
        assert_eq!(s.delivered_quality, 1.0);
        assert_eq!(send(f64::INFINITY, 50).delivered_count(), 50);
    }

    #[test]
    fn half_rate_alternates() {
        let s = send(FB * 7.5, 301);
        assert_eq!(s.delivered_count(), 151);
        assert!(s.delivered.iter().step_by(2).all(|&d| d));
        assert!((s.delivered_quality - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_quarter_rate_delivers_three_quarters() {
        let s = send(FB * 15.0 * 0.75, 400);
        assert!((s.delivered_count() as i64 - 300).abs() <= 1, "{}", s.delivered_count());
    }

    #[test]
    fn dead_segment_delivers_nothing() {
        let trace = LinkTrace::limited(FB * 15.0, 0.0, (10.0, 20.0), 30.0).unwrap();
        let s = transmit(450, 15.0, FB, &trace, ChannelParams::default(), FB * 15.0, 1.0).unwrap();
        assert!(s.delivered[151..300].iter().all(|&d| !d));
        assert!(s.delivered[..150].iter().all(|&d| d));
    }

    #[test]
    fn condition_measurement() {
        let t = LinkTrace::constant(300_000.0, 60.0).unwrap();
        assert!((measure_condition(&t, 30.0, 1.0, 1_000_000.0) - 0.3).abs() < 1e-12);
        assert_eq!(measure_condition(&t, 30.0, 1.0, 300_000.0), 1.0);
        let m = LinkTrace::middle_third(1000.0, 100.0, 30.0).unwrap();
        assert_eq!(measure_condition(&m, 5.0, 1.0, 1000.0), 1.0);
        assert!((measure_condition(&m, 15.0, 1.0, 1000.0) - 0.1).abs() < 1e-12);
        assert_eq!(measure_condition(&m, 25.0, 1.0, 1000.0), 1.0);
        assert!((measure_condition(&m, 10.5, 1.0, 1000.0) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = LinkTrace::middle_third(1000.0, 250.0, 90.0).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_start_s,rate_bytes_per_s\n"));
        assert_eq!(LinkTrace::read_csv(buf.as_slice(), 90.0).unwrap(), m);
    }
}
