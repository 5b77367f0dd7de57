//! Detection error metrics against scripted ground truth.

use std::ops::Range;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::GroundTruth;
use crate::speed::SpeedReport;

/// Maximal runs of `true`, as half-open frame ranges.
pub fn events(flags: &[bool]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..flags.len());
    }
    out
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Event-level comparison of a verdict series with the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventCounts {
    pub truth_events: usize,
    pub detected_events: usize,
    /// Truth events overlapped by no detected event.
    pub missed: usize,
    /// Detected events overlapping no truth event.
    pub spurious: usize,
}

impl EventCounts {
    /// Mismatched events over truth events; `None` without truth events.
    pub fn error(&self) -> Option<f64> {
        (self.truth_events > 0).then(|| (self.missed + self.spurious) as f64 / self.truth_events as f64)
    }
}

pub fn count_events(detected: &[bool], truth: &[bool]) -> Result<EventCounts> {
    if detected.len() != truth.len() {
        return Err(Error::StreamDesync(format!(
            "{} verdicts against {} truth frames",
            detected.len(),
            truth.len()
        )));
    }
    let (d, t) = (events(detected), events(truth));
    Ok(EventCounts {
        truth_events: t.len(),
        detected_events: d.len(),
        missed: t.iter().filter(|e| !d.iter().any(|x| overlaps(e, x))).count(),
        spurious: d.iter().filter(|x| !t.iter().any(|e| overlaps(e, x))).count(),
    })
}

/// Congestion error: (missed + spurious events) / truth events. `None` when
/// the truth has no congestion event, where the ratio is undefined.
pub fn congestion_error(detected: &[bool], truth: &[bool]) -> Result<Option<f64>> {
    Ok(count_events(detected, truth)?.error())
}

/// A truth vehicle and the speed measured for it, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPair {
    pub truth_mph: f64,
    pub measured_mph: Option<f64>,
}

/// Mean relative speed error; an unmatched vehicle counts as 100% error.
pub fn speed_error(pairs: &[SpeedPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|p| match p.measured_mph {
            Some(m) => (p.truth_mph - m).abs() / p.truth_mph,
            None => 1.0,
        })
        .sum();
    total / pairs.len() as f64
}

/// Root-mean-square speed error in mph; an unmatched vehicle contributes its truth speed.
pub fn rms_error(pairs: &[SpeedPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let r = p.truth_mph - p.measured_mph.unwrap_or(0.0);
            r * r
        })
        .sum();
    (total / pairs.len() as f64).sqrt()
}

/// Gates for pairing speed reports with truth vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchGates {
    /// Largest gap between reported and true first-line crossing, seconds.
    pub max_time_s: f64,
    /// Largest lane offset, meters.
    pub max_lane_m: f64,
}

impl Default for MatchGates {
    fn default() -> Self {
        MatchGates {
            max_time_s: 2.0,
            max_lane_m: 2.0,
        }
    }
}

/// One truth vehicle with a defined speed and the report assigned to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleMatch {
    /// Index into `GroundTruth::vehicles`.
    pub truth: usize,
    /// Index into the report slice.
    pub report: Option<usize>,
    /// Source frame midway between the true line crossings.
    pub frame: usize,
}

/// Pairs reports with truth vehicles one-to-one, maximizing the number of
/// gated pairs and then minimizing the summed normalized crossing-time and
/// lane offsets. Reports left over are spurious and ignored by the metrics.
pub fn match_reports(reports: &[SpeedReport], truth: &GroundTruth, gates: MatchGates) -> Vec<VehicleMatch> {
    let vehicles: Vec<(usize, (usize, usize), f64)> = truth
        .vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.mean_speed_mph.is_some())
        .filter_map(|(i, v)| v.crossing.map(|c| (i, c, v.lane_x_m)))
        .collect();
    let mut out: Vec<VehicleMatch> = vehicles
        .iter()
        .map(|&(i, (a, b), _)| VehicleMatch {
            truth: i,
            report: None,
            frame: (a + b) / 2,
        })
        .collect();
    if vehicles.is_empty() || reports.is_empty() {
        return out;
    }
    const SCALE: f64 = 1e6;
    // any gated pair outweighs the cost spread of all others combined
    let bonus = (4.0 * SCALE) as i64 * (vehicles.len().max(reports.len()) as i64 + 1);
    let cost = |v: usize, r: usize| -> Option<i64> {
        let (_, (a, b), lane) = vehicles[v];
        let rep = &reports[r];
        let first = a.min(b) as f64;
        let dt = (rep.first_frame as f64 - first).abs() / truth.fps;
        let dl = (rep.lane_x_m - lane).abs();
        (dt <= gates.max_time_s && dl <= gates.max_lane_m)
            .then(|| ((dt / gates.max_time_s + dl / gates.max_lane_m) * SCALE).round() as i64)
    };
    let transpose = vehicles.len() > reports.len();
    let (rows, cols) = if transpose {
        (reports.len(), vehicles.len())
    } else {
        (vehicles.len(), reports.len())
    };
    let weights = Matrix::from_fn(rows, cols, |(r, c)| {
        let (v, rep) = if transpose { (c, r) } else { (r, c) };
        cost(v, rep).map_or(0, |k| bonus - k)
    });
    let (_, assign) = kuhn_munkres(&weights);
    for (r, &c) in assign.iter().enumerate() {
        let (v, rep) = if transpose { (c, r) } else { (r, c) };
        if cost(v, rep).is_some() {
            out[v].report = Some(rep);
        }
    }
    out
}

/// Errors of one detection series, or of a slice of it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `None` when no truth congestion event falls in the evaluated frames.
    pub congestion: Option<f64>,
    pub speed: f64,
    pub rms_mph: f64,
    /// Mean of the matched measured speeds.
    pub mean_speed_mph: Option<f64>,
    pub events: EventCounts,
    pub truth_vehicles: usize,
    pub matched_vehicles: usize,
}

/// Scores `congested` and `reports` over the frames in `ranges`.
///
/// Congestion events are clipped to each range; vehicles count when the
/// midpoint of their true crossing window lies in a range.
pub fn evaluate_ranges(
    congested: &[bool],
    reports: &[SpeedReport],
    truth: &GroundTruth,
    matches: &[VehicleMatch],
    ranges: &[Range<usize>],
) -> Result<ErrorReport> {
    if congested.len() != truth.congestion.len() {
        return Err(Error::StreamDesync(format!(
            "{} verdicts against {} truth frames",
            congested.len(),
            truth.congestion.len()
        )));
    }
    let mut events = EventCounts::default();
    for r in ranges {
        let r = r.start.min(congested.len())..r.end.min(congested.len());
        let c = count_events(&congested[r.clone()], &truth.congestion[r])?;
        events.truth_events += c.truth_events;
        events.detected_events += c.detected_events;
        events.missed += c.missed;
        events.spurious += c.spurious;
    }
    let pairs: Vec<SpeedPair> = matches
        .iter()
        .filter(|m| ranges.iter().any(|r| r.contains(&m.frame)))
        .map(|m| SpeedPair {
            truth_mph: truth.vehicles[m.truth].mean_speed_mph.unwrap_or(0.0),
            measured_mph: m.report.map(|r| reports[r].mean_mph),
        })
        .collect();
    let measured: Vec<f64> = pairs.iter().filter_map(|p| p.measured_mph).collect();
    Ok(ErrorReport {
        congestion: events.error(),
        speed: speed_error(&pairs),
        rms_mph: rms_error(&pairs),
        mean_speed_mph: (!measured.is_empty()).then(|| measured.iter().sum::<f64>() / measured.len() as f64),
        events,
        truth_vehicles: pairs.len(),
        matched_vehicles: measured.len(),
    })
}

/// Scores a whole run.
pub fn evaluate(congested: &[bool], reports: &[SpeedReport], truth: &GroundTruth, gates: MatchGates) -> Result<ErrorReport> {
    let matches = match_reports(reports, truth, gates);
    evaluate_ranges(congested, reports, truth, &matches, &[0..congested.len()])
}

/// Splits frames into maximal ranges where `mask` holds.
pub fn mask_ranges(mask: &[bool]) -> Vec<Range<usize>> {
    events(mask)
}
