//! Raw frame sequence files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TTFV"
//! 4       4     width (u32)
//! 8       4     height (u32)
//! 12      4     d, channels per pixel (u32, 1 or 3)
//! 16      4     fps numerator (u32)
//! 20      4     fps denominator (u32)
//! 24      4     frame count (u32)
//! 28      ...   frames in index order; each frame is planar by channel,
//!               every plane row-major u8 (width * height bytes)
//! ```

use std::borrow::Borrow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::source::FrameSource;

pub const MAGIC: &[u8; 4] = b"TTFV";
pub const HEADER_LEN: u64 = 28;

/// Header fields of a raw sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub fps_numerator: u32,
    pub fps_denominator: u32,
    pub frame_count: u32,
}

impl RawHeader {
    pub fn fps(&self) -> f64 {
        self.fps_numerator as f64 / self.fps_denominator as f64
    }

    fn frame_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * self.channels as u64
    }
}

/// Rational approximation of a frame rate with denominator 1 or 1000.
pub fn fps_rational(fps: f64) -> (u32, u32) {
    if (fps - fps.round()).abs() < 1e-9 {
        (fps.round() as u32, 1)
    } else {
        ((fps * 1000.0).round() as u32, 1000)
    }
}

pub fn write_sequence<W: Write>(out: W, frames: &[Frame], fps: f64) -> Result<()> {
    write_frames(out, frames.len(), fps, frames.iter())
}

/// Streams every frame of `source` without holding the sequence in memory.
pub fn write_source<W: Write, S: FrameSource + ?Sized>(out: W, source: &S) -> Result<()> {
    write_frames(out, source.len(), source.spec().fps, (0..source.len()).map(|i| source.frame(i)))
}

fn write_frames<W, I, F>(mut out: W, count: usize, fps: f64, frames: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = F>,
    F: Borrow<Frame>,
{
    let mut frames = frames.into_iter().peekable();
    let (width, height, channels) = match frames.peek() {
        Some(f) if count > 0 => {
            let f = f.borrow();
            (f.width(), f.height(), f.channels())
        }
        _ => return Err(Error::InvalidArgument("cannot write an empty sequence".into())),
    };
    let (num, den) = fps_rational(fps);
    out.write_all(MAGIC)?;
    for v in [width as u32, height as u32, channels as u32, num, den, count as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut plane = vec![0u8; width * height];
    let mut written = 0usize;
    for f in frames {
        let f = f.borrow();
        if f.width() != width || f.height() != height || f.channels() != channels {
            return Err(Error::dims(
                format!("{width}x{height}x{channels}"),
                format!("{}x{}x{}", f.width(), f.height(), f.channels()),
            ));
        }
        for c in 0..channels {
            for (p, px) in plane.iter_mut().zip(f.data().chunks_exact(channels)) {
                *p = px[c];
            }
            out.write_all(&plane)?;
        }
        written += 1;
    }
    if written != count {
        return Err(Error::StreamDesync(format!("header promises {count} frames, wrote {written}")));
    }
    out.flush()?;
    Ok(())
}

pub fn save_sequence(path: impl AsRef<Path>, frames: &[Frame], fps: f64) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_sequence(BufWriter::new(file), frames, fps)
}

/// Reads exactly `buf.len()` bytes or reports the offset at which the input ended.
fn read_at<R: Read>(input: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Format {
                    offset: *offset + filled as u64,
                    message: format!("truncated {what}: needed {} more bytes", buf.len() - filled),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

pub fn read_header<R: Read>(input: &mut R) -> Result<RawHeader> {
    let mut offset = 0u64;
    let mut magic = [0u8; 4];
    read_at(input, &mut magic, &mut offset, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"TTFV\""),
        });
    }
    let mut fields = [0u32; 6];
    for f in fields.iter_mut() {
        let mut b = [0u8; 4];
        read_at(input, &mut b, &mut offset, "header")?;
        *f = u32::from_le_bytes(b);
    }
    let header = RawHeader {
        width: fields[0],
        height: fields[1],
        channels: fields[2],
        fps_numerator: fields[3],
        fps_denominator: fields[4],
        frame_count: fields[5],
    };
    let bad = |off: u64, msg: &str| Error::Format {
        offset: off,
        message: msg.to_string(),
    };
    if header.width == 0 || header.height == 0 {
        return Err(bad(4, "zero width or height"));
    }
    if header.channels != 1 && header.channels != 3 {
        return Err(bad(12, "channel count must be 1 or 3"));
    }
    if header.fps_numerator == 0 || header.fps_denominator == 0 {
        return Err(bad(16, "frame rate must be positive"));
    }
    Ok(header)
}

pub fn read_sequence<R: Read>(mut input: R) -> Result<(RawHeader, Vec<Frame>)> {
    let header = read_header(&mut input)?;
    let (w, h, ch) = (header.width as usize, header.height as usize, header.channels as usize);
    let mut offset = HEADER_LEN;
    let mut plane = vec![0u8; w * h];
    let mut frames = Vec::with_capacity(header.frame_count as usize);
    for i in 0..header.frame_count as u64 {
        let mut data = vec![0u8; w * h * ch];
        for c in 0..ch {
            read_at(&mut input, &mut plane, &mut offset, &format!("frame {i}"))?;
            for (px, &v) in data.chunks_exact_mut(ch).zip(&plane) {
                px[c] = v;
            }
        }
        debug_assert_eq!(offset, HEADER_LEN + (i + 1) * header.frame_bytes());
        frames.push(Frame::new(i, i as f64 / header.fps(), w, h, ch, data)?);
    }
    Ok((header, frames))
}

pub fn load_raw_sequence(path: impl AsRef<Path>) -> Result<(RawHeader, Vec<Frame>)> {
    let file = File::open(path.as_ref())?;
    read_sequence(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, ch: usize) -> Vec<Frame> {
        (0..n)
            .map(|i| {
                let data = (0..6 * 4 * ch).map(|k| (k * 13 + i * 31) as u8).collect();
                Frame::new(i as u64, i as f64 / 15.0, 6, 4, ch, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for ch in [1, 3] {
            let frames = sample(5, ch);
            let mut buf = Vec::new();
            write_sequence(&mut buf, &frames, 15.0).unwrap();
            assert_eq!(buf.len() as u64, HEADER_LEN + 5 * 6 * 4 * ch as u64);
            let (h, back) = read_sequence(&buf[..]).unwrap();
            assert_eq!(h.fps(), 15.0);
            assert_eq!(back, frames);
        }
    }

    #[test]
    fn payload_is_planar() {
        let f = Frame::new(0, 0.0, 2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let mut buf = Vec::new();
        write_sequence(&mut buf, &[f], 15.0).unwrap();
        assert_eq!(&buf[28..], &[1, 4, 2, 5, 3, 6]);
        assert_eq!(&buf[..4], b"TTFV");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
    }

    #[test]
    fn truncation_reports_offset() {
        let frames = sample(2, 3);
        let mut buf = Vec::new();
        write_sequence(&mut buf, &frames, 15.0).unwrap();
        buf.truncate(buf.len() - 10);
        match read_sequence(&buf[..]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, buf.len() as u64),
            other => panic!("expected format error, got {other:?}"),
        }
        match read_sequence(&buf[..10]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_sequence(&bad[..]), Err(Error::Format { offset: 0, .. })));
    }
}
