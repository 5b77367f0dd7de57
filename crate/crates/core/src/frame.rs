//! Frames and basic frame transforms.
//!
//! Pixels are stored interleaved (`[r, g, b, r, g, b, ...]` for three channels),
//! row-major. The on-disk raw format is planar; see [`crate::rawio`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and timing of a video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Seconds.
    pub duration: f64,
}

impl VideoSpec {
    pub fn new(width: usize, height: usize, fps: f64, duration: f64) -> Result<Self> {
        let spec = VideoSpec {
            width,
            height,
            fps,
            duration,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "video dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "duration must be non-negative, got {}",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.fps * self.duration).round() as usize
    }

    pub fn frame_interval(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 / self.fps
    }
}

/// A single video frame of `channels`-dimensional feature vectors (1 or 3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u64,
    /// Capture time in seconds. Kept as the bit pattern so frames stay `Eq`.
    timestamp_bits: u64,
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(
        index: u64,
        timestamp: f64,
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "frames carry 1 or 3 channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("frame dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(
                format!("{} bytes", width * height * channels),
                format!("{} bytes", data.len()),
            ));
        }
        Ok(Frame {
            index,
            timestamp_bits: timestamp.to_bits(),
            width,
            height,
            channels,
            data,
        })
    }

    /// A frame filled with one feature vector.
    pub fn filled(index: u64, timestamp: f64, width: usize, height: usize, value: &[u8]) -> Result<Self> {
        let data = value.iter().copied().cycle().take(width * height * value.len()).collect();
        Frame::new(index, timestamp, width, height, value.len(), data)
    }

    pub fn timestamp(&self) -> f64 {
        f64::from_bits(self.timestamp_bits)
    }

    pub fn set_timestamp(&mut self, t: f64) {
        self.timestamp_bits = t.to_bits();
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Checks that the frame matches `spec` in resolution.
    pub fn check_spec(&self, spec: &VideoSpec) -> Result<()> {
        if self.width != spec.width || self.height != spec.height {
            return Err(Error::dims(
                format!("{}x{}", spec.width, spec.height),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }
}

/// Per-axis coverage table for area-averaging: for each output cell the
/// overlapping source cells and the length of the overlap.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = ((hi.ceil() as usize).max(first + 1)).min(src);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (w > 1e-12).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize. An exact 2x decimation averages 2x2 blocks.
pub fn resize(frame: &Frame, width: usize, height: usize) -> Result<Frame> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if width == frame.width && height == frame.height {
        return Ok(frame.clone());
    }
    if frame.width % width == 0 && frame.height % height == 0 {
        return Ok(box_downscale(frame, frame.width / width, frame.height / height));
    }
    Ok(area_resize(frame, width, height))
}

fn area_resize(frame: &Frame, width: usize, height: usize) -> Frame {
    let ch = frame.channels;
    let wx = area_weights(frame.width, width);
    let wy = area_weights(frame.height, height);

    // horizontal pass into f64 rows
    let mut horiz = vec![0.0f64; width * frame.height * ch];
    for y in 0..frame.height {
        let src_row = &frame.data[y * frame.width * ch..(y + 1) * frame.width * ch];
        let dst_row = &mut horiz[y * width * ch..(y + 1) * width * ch];
        for (ox, taps) in wx.iter().enumerate() {
            for &(sx, w) in taps {
                for c in 0..ch {
                    dst_row[ox * ch + c] += w * src_row[sx * ch + c] as f64;
                }
            }
        }
    }

    let norm = (frame.width as f64 / width as f64) * (frame.height as f64 / height as f64);
    let mut out = vec![0u8; width * height * ch];
    let mut acc = vec![0.0f64; width * ch];
    for (oy, taps) in wy.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &(sy, w) in taps {
            let row = &horiz[sy * width * ch..(sy + 1) * width * ch];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += w * v;
            }
        }
        let dst = &mut out[oy * width * ch..(oy + 1) * width * ch];
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = (a / norm + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    Frame::new(frame.index, frame.timestamp(), width, height, ch, out).expect("valid dimensions")
}

/// Integer-factor area average; same rounding as the general path.
fn box_downscale(frame: &Frame, fx: usize, fy: usize) -> Frame {
    let ch = frame.channels;
    let (width, height) = (frame.width / fx, frame.height / fy);
    let n = (fx * fy) as u32;
    let mut acc = vec![0u32; width * ch];
    let mut out = vec![0u8; width * height * ch];
    for oy in 0..height {
        acc.iter_mut().for_each(|v| *v = 0);
        for sy in oy * fy..(oy + 1) * fy {
            let row = &frame.data[sy * frame.width * ch..(sy + 1) * frame.width * ch];
            for (ox, block) in row.chunks_exact(fx * ch).enumerate() {
                for (k, &v) in block.iter().enumerate() {
                    acc[ox * ch + k % ch] += v as u32;
                }
            }
        }
        for (d, &a) in out[oy * width * ch..(oy + 1) * width * ch].iter_mut().zip(&acc) {
            *d = ((2 * a + n) / (2 * n)) as u8;
        }
    }
    Frame::new(frame.index, frame.timestamp(), width, height, ch, out).expect("valid dimensions")
}

/// RGB to intensity by channel mean, `round((R+G+B)/3)`. Single-channel frames pass through.
pub fn to_intensity(frame: &Frame) -> Frame {
    if frame.channels == 1 {
        return frame.clone();
    }
    let data = frame
        .data
        .chunks_exact(3)
        .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16 + 1) / 3) as u8)
        .collect();
    Frame {
        data,
        channels: 1,
        ..frame.clone_header()
    }
}

impl Frame {
    fn clone_header(&self) -> Frame {
        Frame {
            index: self.index,
            timestamp_bits: self.timestamp_bits,
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: Vec::new(),
        }
    }
}
