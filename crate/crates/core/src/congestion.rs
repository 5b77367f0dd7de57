//! Stopped-vehicle area from the disagreement of the two foreground masks,
//! folded through a dwell counter into per-frame congestion verdicts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RoiMask;
use crate::pixel::ForegroundMask;

/// Count of ROI pixels that the global foreground model calls foreground while
/// the adaptive model has already absorbed them into the background.
pub fn stopped_area(gfm_mask: &ForegroundMask, adaptive_mask: &ForegroundMask, roi: &RoiMask) -> Result<usize> {
    gfm_mask.same_shape(adaptive_mask)?;
    if roi.width != gfm_mask.width || roi.height != gfm_mask.height {
        return Err(Error::dims(
            format!("{}x{}", gfm_mask.width, gfm_mask.height),
            format!("roi {}x{}", roi.width, roi.height),
        ));
    }
    Ok(gfm_mask
        .as_slice()
        .iter()
        .zip(adaptive_mask.as_slice())
        .zip(roi.as_slice())
        .filter(|((&g, &z), &inside)| inside && g == 1 && z == 0)
        .count())
}

/// Area threshold covering `vehicles` vehicles of `size_m` (width × length, meters).
pub fn calibrate_area_threshold(size_m: [f64; 2], meters_per_pixel: f64, vehicles: f64) -> f64 {
    vehicles * (size_m[0] / meters_per_pixel) * (size_m[1] / meters_per_pixel)
}

/// Frames corresponding to `seconds` at `fps`, rounded.
pub fn time_threshold_frames(seconds: f64, fps: f64) -> u64 {
    (seconds * fps).round().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionVerdict {
    pub frame: u64,
    pub area: usize,
    pub t_c: u64,
    pub congested: bool,
}

/// Dwell counter: up while the stopped area exceeds `tau_a`, down (never
/// below zero) otherwise; congested while the count exceeds `tau_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionState {
    t_c: u64,
    tau_a: f64,
    tau_t: u64,
}

impl CongestionState {
    pub fn new(tau_a: f64, tau_t: u64) -> Result<Self> {
        if !(tau_a > 0.0) {
            return Err(Error::InvalidArgument(format!("area threshold must be positive, got {tau_a}")));
        }
        Ok(CongestionState { t_c: 0, tau_a, tau_t })
    }

    pub fn t_c(&self) -> u64 {
        self.t_c
    }

    pub fn tau_a(&self) -> f64 {
        self.tau_a
    }

    pub fn tau_t(&self) -> u64 {
        self.tau_t
    }

    pub fn step(&mut self, frame: u64, area: usize) -> CongestionVerdict {
        if area as f64 > self.tau_a {
            self.t_c += 1;
        } else {
            self.t_c = self.t_c.saturating_sub(1);
        }
        CongestionVerdict {
            frame,
            area,
            t_c: self.t_c,
            congested: self.t_c > self.tau_t,
        }
    }
}

/// Folds the counter over synchronized mask pairs.
pub fn detect_congestion<'a, I>(pairs: I, roi: &RoiMask, state: &mut CongestionState) -> Result<Vec<CongestionVerdict>>
where
    I: IntoIterator<Item = (&'a ForegroundMask, &'a ForegroundMask)>,
{
    let mut out = Vec::new();
    for (g, z) in pairs {
        if g.frame != z.frame {
            return Err(Error::StreamDesync(format!("mask frames {} and {}", g.frame, z.frame)));
        }
        if let Some(prev) = out.last().map(|v: &CongestionVerdict| v.frame) {
            if g.frame <= prev {
                return Err(Error::StreamOrder { previous: prev, found: g.frame });
            }
        }
        let area = stopped_area(g, z, roi)?;
        out.push(state.step(g.frame, area));
    }
    Ok(out)
}

/// CSV rows: `frame,area_px,T_c,congested`.
pub fn write_verdicts_csv<W: Write>(out: W, verdicts: &[CongestionVerdict]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "frame,area_px,T_c,congested")?;
    for v in verdicts {
        writeln!(w, "{},{},{},{}", v.frame, v.area, v.t_c, v.congested as u8)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, frame: u64, v: u8) -> ForegroundMask {
        ForegroundMask::from_vec(w, h, frame, vec![v; w * h]).unwrap()
    }

    #[test]
    fn area_cases() {
        let roi = RoiMask::full(10, 10);
        let a = mask(10, 10, 0, 1);
        assert_eq!(stopped_area(&a, &a, &roi).unwrap(), 0);
        assert_eq!(stopped_area(&a, &mask(10, 10, 0, 0), &roi).unwrap(), 100);
        assert!(stopped_area(&a, &mask(9, 10, 0, 0), &roi).is_err());
    }

    #[test]
    fn latency_is_tau_t_plus_one() {
        let mut s = CongestionState::new(10.0, 75).unwrap();
        let first = (1..=200u64).find(|&f| s.step(f, 11).congested).unwrap();
        assert_eq!(first, 76);
    }

    #[test]
    fn alternating_never_congests() {
        let mut s = CongestionState::new(10.0, 3).unwrap();
        for f in 0..100u64 {
            let v = s.step(f, if f % 2 == 0 { 50 } else { 0 });
            assert!(v.t_c <= 1);
            assert!(!v.congested);
        }
        let mut s = CongestionState::new(10.0, 3).unwrap();
        assert!((0..100).all(|f| { let v = s.step(f, 0); v.t_c == 0 && !v.congested }));
    }

    #[test]
    fn desync_rejected() {
        let roi = RoiMask::full(2, 2);
        let (a, b) = (mask(2, 2, 0, 1), mask(2, 2, 1, 0));
        let mut s = CongestionState::new(1.0, 1).unwrap();
        assert!(matches!(
            detect_congestion([(&a, &b)], &roi, &mut s),
            Err(Error::StreamDesync(_))
        ));
    }

    #[test]
    fn calibrated_threshold() {
        assert!((calibrate_area_threshold([2.0, 4.5], 0.1, 3.0) - 2700.0).abs() < 1e-9);
    }
}
