//! Errors inside sliding windows chosen by how much of the window the link
//! spent in the bad condition.

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_ranges, ErrorReport, VehicleMatch};
use crate::channel::LinkTrace;
use crate::error::{Error, Result};
use crate::scene::GroundTruth;
use crate::speed::SpeedReport;

/// Frames during which the link delivers less than `reference_rate`.
pub fn bad_frames(trace: &LinkTrace, reference_rate: f64, fps: f64, n: usize) -> Vec<bool> {
    (0..n).map(|i| trace.rate_at(i as f64 / fps) < reference_rate).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    /// Requested bad-time fraction.
    pub target: f64,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Bad-time fraction of the selected window.
    pub bad_fraction: f64,
    pub report: ErrorReport,
}

/// Selected window per target fraction; `None` marks a target no window
/// reaches within `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCurve {
    pub points: Vec<(f64, Option<WindowPoint>)>,
}

/// Start of the window of `len` frames whose bad fraction is closest to
/// `target` (earliest on ties), and that fraction.
pub fn select_window(bad: &[bool], len: usize, target: f64) -> Option<(usize, f64)> {
    if len == 0 || len > bad.len() {
        return None;
    }
    let mut prefix = Vec::with_capacity(bad.len() + 1);
    prefix.push(0usize);
    for &b in bad {
        prefix.push(prefix.last().unwrap() + b as usize);
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for s in 0..=bad.len() - len {
        let frac = (prefix[s + len] - prefix[s]) as f64 / len as f64;
        let dist = (frac - target).abs();
        if best.map_or(true, |(_, _, d)| dist < d) {
            best = Some((s, frac, dist));
        }
    }
    best.map(|(s, f, _)| (s, f))
}

/// Evaluates one detection series over the window closest to each target.
#[allow(clippy::too_many_arguments)]
pub fn sliding_window_errors(
    congested: &[bool],
    reports: &[SpeedReport],
    truth: &GroundTruth,
    matches: &[VehicleMatch],
    bad: &[bool],
    targets: &[f64],
    window_frames: usize,
    tolerance: f64,
) -> Result<WindowCurve> {
    if bad.len() != congested.len() {
        return Err(Error::StreamDesync(format!(
            "{} condition flags against {} verdicts",
            bad.len(),
            congested.len()
        )));
    }
    let mut points = Vec::with_capacity(targets.len());
    for &target in targets {
        let point = match select_window(bad, window_frames, target) {
            Some((start, frac)) if (frac - target).abs() <= tolerance => {
                let range = start..start + window_frames;
                Some(WindowPoint {
                    target,
                    start_frame: range.start,
                    end_frame: range.end,
                    bad_fraction: frac,
                    report: evaluate_ranges(congested, reports, truth, matches, &[range])?,
                })
            }
            _ => None,
        };
        points.push((target, point));
    }
    Ok(WindowCurve { points })
}
