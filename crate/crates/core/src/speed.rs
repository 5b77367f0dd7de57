//! Blob labeling, trajectory linking and per-vehicle speed estimation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Calibration;
use crate::pixel::ForegroundMask;
use crate::scene::crossing_index;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedParams {
    pub min_blob_area: usize,
    /// Largest centroid jump (px) that may continue a trajectory.
    pub max_link_distance: f64,
    /// Missed frames tolerated inside one trajectory.
    pub max_gap: u64,
}

impl Default for SpeedParams {
    fn default() -> Self {
        SpeedParams {
            min_blob_area: 15,
            max_link_distance: 20.0,
            max_gap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// 1-based label in row-major discovery order.
    pub label: u32,
    pub area: usize,
    /// Mean of pixel centers, `(x + 0.5, y + 0.5)`.
    pub centroid: [f64; 2],
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`.
    pub bbox: [usize; 4],
    pub frame: u64,
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let p = parent[a as usize];
        parent[a as usize] = parent[p as usize];
        a = p;
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Per-pixel component labels (0 = background), 8-connectivity, numbered in
/// row-major order of each component's first pixel. No area filtering.
pub fn label_image(mask: &ForegroundMask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width, mask.height);
    let src = mask.as_slice();
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if src[i] == 0 {
                continue;
            }
            let mut neighbors = [0u32; 4];
            if x > 0 {
                neighbors[0] = labels[i - 1];
            }
            if y > 0 {
                let up = (y - 1) * w + x;
                if x > 0 {
                    neighbors[1] = labels[up - 1];
                }
                neighbors[2] = labels[up];
                if x + 1 < w {
                    neighbors[3] = labels[up + 1];
                }
            }
            let mut current = 0u32;
            for &n in neighbors.iter().filter(|&&n| n != 0) {
                if current == 0 {
                    current = n;
                } else {
                    union(&mut parent, current, n);
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[i] = current;
        }
    }
    // compact roots into consecutive labels by first-pixel order
    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *l = remap[root];
    }
    (labels, next)
}

/// Connected foreground components with at least `min_area` pixels.
pub fn label_components(mask: &ForegroundMask, min_area: usize) -> Vec<Blob> {
    let (labels, n) = label_image(mask);
    let w = mask.width;
    struct Acc {
        area: usize,
        sx: f64,
        sy: f64,
        bbox: [usize; 4],
    }
    let mut acc: Vec<Acc> = (0..n)
        .map(|_| Acc {
            area: 0,
            sx: 0.0,
            sy: 0.0,
            bbox: [usize::MAX, usize::MAX, 0, 0],
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize - 1];
        a.area += 1;
        a.sx += x as f64 + 0.5;
        a.sy += y as f64 + 0.5;
        a.bbox = [a.bbox[0].min(x), a.bbox[1].min(y), a.bbox[2].max(x), a.bbox[3].max(y)];
    }
    let mut blobs = Vec::new();
    for a in acc {
        if a.area >= min_area.max(1) {
            blobs.push(Blob {
                label: blobs.len() as u32 + 1,
                area: a.area,
                centroid: [a.sx / a.area as f64, a.sy / a.area as f64],
                bbox: a.bbox,
                frame: mask.frame,
            });
        }
    }
    blobs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Completed,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Position in the processed stream; consecutive processed frames differ by 1.
    pub step: u64,
    /// Source frame index.
    pub frame: u64,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub observations: Vec<Observation>,
    pub state: TrackState,
}

impl Trajectory {
    pub fn last(&self) -> &Observation {
        self.observations.last().expect("trajectories are never empty")
    }

    /// Observation indices at which the centroid first crosses each line.
    pub fn crossings(&self, lines: [f64; 2]) -> [Option<usize>; 2] {
        let ys: Vec<f64> = self.observations.iter().map(|o| o.centroid[1]).collect();
        [crossing_index(&ys, lines[0]), crossing_index(&ys, lines[1])]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub trajectory_id: u64,
    /// Source frame of the first crossing.
    pub first_frame: u64,
    /// Source frame of the second crossing.
    pub last_frame: u64,
    /// Processed-stream steps between the crossings.
    pub f: u64,
    pub displacements: Vec<f64>,
    pub mean_mph: f64,
    /// Mean centroid x within the crossing window, meters.
    pub lane_x_m: f64,
}

/// Speed of a trajectory between the referential lines; `None` unless it
/// crossed both.
pub fn estimate_speed(traj: &Trajectory, calib: &Calibration) -> Option<SpeedReport> {
    let [a, b] = traj.crossings(calib.lines);
    let (a, b) = (a?, b?);
    let (s, e) = (a.min(b), a.max(b));
    let obs = &traj.observations[s..=e];
    let f = obs.last()?.step - obs.first()?.step;
    if f == 0 {
        return None;
    }
    let displacements: Vec<f64> = obs
        .windows(2)
        .map(|w| {
            let dx = w[1].centroid[0] - w[0].centroid[0];
            let dy = w[1].centroid[1] - w[0].centroid[1];
            (dx * dx + dy * dy).sqrt()
        })
        .collect();
    let total: f64 = displacements.iter().sum();
    let mean_mph = calib.unit * calib.meters_per_pixel * (total / calib.frame_interval) / f as f64;
    let lane_x_m = obs.iter().map(|o| o.centroid[0]).sum::<f64>() / obs.len() as f64 * calib.meters_per_pixel;
    Some(SpeedReport {
        trajectory_id: traj.id,
        first_frame: obs[0].frame,
        last_frame: obs[obs.len() - 1].frame,
        f,
        displacements,
        mean_mph,
        lane_x_m,
    })
}

/// Greedy closest-first trajectory linker.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: SpeedParams,
    next_id: u64,
    last_step: Option<u64>,
    active: Vec<Trajectory>,
}

impl Tracker {
    pub fn new(params: SpeedParams) -> Self {
        Tracker {
            params,
            next_id: 0,
            last_step: None,
            active: Vec::new(),
        }
    }

    pub fn active(&self) -> &[Trajectory] {
        &self.active
    }

    /// Links the blobs of one processed frame. Returns trajectories that
    /// completed because their gap grew past `max_gap`.
    pub fn step(&mut self, step: u64, frame: u64, blobs: &[Blob]) -> Result<Vec<Trajectory>> {
        if let Some(prev) = self.last_step {
            if step <= prev {
                return Err(Error::StreamOrder { previous: prev, found: step });
            }
        }
        self.last_step = Some(step);
        let max_gap = self.params.max_gap;
        let mut done = Vec::new();
        let mut i = 0;
        while i < self.active.len() {
            if step - self.active[i].last().step - 1 > max_gap {
                let mut t = self.active.remove(i);
                t.state = TrackState::Completed;
                done.push(t);
            } else {
                i += 1;
            }
        }

        let limit = self.params.max_link_distance;
        let mut pairs = Vec::new();
        for (ti, t) in self.active.iter().enumerate() {
            let c = t.last().centroid;
            for (bi, b) in blobs.iter().enumerate() {
                let d = ((b.centroid[0] - c[0]).powi(2) + (b.centroid[1] - c[1]).powi(2)).sqrt();
                if d <= limit {
                    pairs.push((d, ti, bi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; self.active.len()];
        let mut blob_used = vec![false; blobs.len()];
        for (_, ti, bi) in pairs {
            if track_used[ti] || blob_used[bi] {
                continue;
            }
            track_used[ti] = true;
            blob_used[bi] = true;
            self.active[ti].observations.push(Observation {
                step,
                frame,
                centroid: blobs[bi].centroid,
            });
        }
        for (bi, b) in blobs.iter().enumerate() {
            if !blob_used[bi] {
                self.active.push(Trajectory {
                    id: self.next_id,
                    observations: vec![Observation {
                        step,
                        frame,
                        centroid: b.centroid,
                    }],
                    state: TrackState::Active,
                });
                self.next_id += 1;
            }
        }
        Ok(done)
    }

    /// Completes every remaining trajectory.
    pub fn finish(&mut self) -> Vec<Trajectory> {
        let mut out = std::mem::take(&mut self.active);
        for t in &mut out {
            t.state = TrackState::Completed;
        }
        out
    }
}

/// Labels, links and measures a mask stream in one pass, emitting a report
/// whenever a completed trajectory crossed both lines.
#[derive(Debug, Clone)]
pub struct SpeedDetector {
    params: SpeedParams,
    calib: Calibration,
    tracker: Tracker,
    step: u64,
    reports: Vec<SpeedReport>,
}

impl SpeedDetector {
    pub fn new(params: SpeedParams, calib: Calibration) -> Self {
        SpeedDetector {
            params,
            calib,
            tracker: Tracker::new(params),
            step: 0,
            reports: Vec::new(),
        }
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calib
    }

    fn absorb(&mut self, done: Vec<Trajectory>) {
        for mut t in done {
            match estimate_speed(&t, &self.calib) {
                Some(r) => self.reports.push(r),
                None => t.state = TrackState::Discarded,
            }
        }
    }

    /// Feeds the next processed mask; frames are treated as adjacent in time.
    pub fn push(&mut self, mask: &ForegroundMask) -> Result<()> {
        let blobs = label_components(mask, self.params.min_blob_area);
        let done = self.tracker.step(self.step, mask.frame, &blobs)?;
        self.step += 1;
        self.absorb(done);
        Ok(())
    }

    /// Reports completed so far, in completion order.
    pub fn reports(&self) -> &[SpeedReport] {
        &self.reports
    }

    pub fn finish(mut self) -> Vec<SpeedReport> {
        let done = self.tracker.finish();
        self.absorb(done);
        self.reports
    }
}

/// Runs the full speed pipeline over masks in frame order.
pub fn detect_speeds<'a, I>(masks: I, calib: &Calibration, params: SpeedParams) -> Result<Vec<SpeedReport>>
where
    I: IntoIterator<Item = &'a ForegroundMask>,
{
    let mut det = SpeedDetector::new(params, *calib);
    let mut previous: Option<u64> = None;
    for m in masks {
        if let Some(p) = previous {
            if m.frame <= p {
                return Err(Error::StreamOrder { previous: p, found: m.frame });
            }
        }
        previous = Some(m.frame);
        det.push(m)?;
    }
    Ok(det.finish())
}

/// CSV rows: `trajectory_id,first_frame,last_frame,f,mean_mph`.
pub fn write_reports_csv<W: Write>(out: W, reports: &[SpeedReport]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "trajectory_id,first_frame,last_frame,f,mean_mph")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{:.6}",
            r.trajectory_id, r.first_frame, r.last_frame, r.f, r.mean_mph
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(w: usize, h: usize, frame: u64, squares: &[(usize, usize, usize)]) -> ForegroundMask {
        let mut m = ForegroundMask::zeros(w, h, frame);
        for &(x0, y0, s) in squares {
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn calib() -> Calibration {
        Calibration::new(0.1, [20.0, 60.0], 15.0).unwrap()
    }

    fn trajectory(ys: &[f64]) -> Trajectory {
        Trajectory {
            id: 0,
            observations: ys
                .iter()
                .enumerate()
                .map(|(i, &y)| Observation {
                    step: i as u64,
                    frame: i as u64,
                    centroid: [10.0, y],
                })
                .collect(),
            state: TrackState::Completed,
        }
    }

    #[test]
    fn two_squares() {
        let m = square_mask(30, 20, 0, &[(2, 3, 5), (15, 10, 5)]);
        let blobs = label_components(&m, 15);
        assert_eq!(blobs.len(), 2);
        assert_eq!(blobs[0].area, 25);
        assert_eq!(blobs[0].centroid, [4.5, 5.5]);
        assert_eq!(blobs[1].centroid, [17.5, 12.5]);
        assert_eq!(blobs[1].bbox, [15, 10, 19, 14]);
        assert!(label_components(&ForegroundMask::zeros(8, 8, 0), 1).is_empty());
    }

    #[test]
    fn diagonal_neighbors_connect() {
        let mut m = ForegroundMask::zeros(4, 4, 0);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(3, 0, true);
        m.set(2, 1, true);
        let (labels, n) = label_image(&m);
        assert_eq!(n, 1);
        assert!(labels.iter().all(|&l| l <= 1));
    }

    #[test]
    fn constant_speed() {
        let ys: Vec<f64> = (0..60).map(|i| 2.0 * i as f64).collect();
        let r = estimate_speed(&trajectory(&ys), &calib()).unwrap();
        assert!((r.mean_mph - 6.71082).abs() < 1e-4, "{}", r.mean_mph);
        assert_eq!(r.f, 20);
    }

    #[test]
    fn piecewise_speed_averages_displacements() {
        let mut ys = vec![5.0];
        for step in [1.0; 10].into_iter().chain([3.0; 10]) {
            let last = *ys.last().unwrap();
            ys.push(last + step);
        }
        // the first observation sits on the first line, the last one just past the second
        let calib = Calibration::new(0.1, [5.0, 44.5], 15.0).unwrap();
        let r = estimate_speed(&trajectory(&ys), &calib).unwrap();
        assert_eq!(r.f, 20);
        assert!((r.mean_mph - 6.71082).abs() < 1e-4, "{}", r.mean_mph);
    }

    #[test]
    fn stationary_between_lines_has_no_report() {
        let ys = vec![40.0; 50];
        assert!(estimate_speed(&trajectory(&ys), &calib()).is_none());
    }

    #[test]
    fn gap_splits_trajectories() {
        let mut masks = Vec::new();
        for f in 0..30u64 {
            if (10..15).contains(&f) {
                masks.push(ForegroundMask::zeros(40, 200, f));
            } else {
                masks.push(square_mask(40, 200, f, &[(10, 2 * f as usize, 5)]));
            }
        }
        let mut tracker = Tracker::new(SpeedParams::default());
        let mut all = Vec::new();
        for (s, m) in masks.iter().enumerate() {
            all.extend(tracker.step(s as u64, m.frame, &label_components(m, 15)).unwrap());
        }
        all.extend(tracker.finish());
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].observations.len(), 10);
        assert_eq!(all[1].observations.len(), 15);
    }

    #[test]
    fn out_of_order_rejected() {
        let masks = [ForegroundMask::zeros(4, 4, 3), ForegroundMask::zeros(4, 4, 2)];
        assert!(matches!(
            detect_speeds(masks.iter(), &calib(), SpeedParams::default()),
            Err(Error::StreamOrder { .. })
        ));
    }
}
