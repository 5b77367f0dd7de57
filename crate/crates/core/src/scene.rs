//! Scripted synthetic traffic scenes and their ground truth.
//!
//! The rendered view is already top-down: world meters map to source pixels by
//! `px = m / meters_per_pixel`. Vehicles are axis-aligned filled rectangles.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSpec};
use crate::geometry::{Roi, MPS_TO_MPH};
use crate::source::FrameSource;

/// More than three stopped vehicles ...
pub const CONGESTION_MIN_VEHICLES: usize = 4;
/// ... for more than ten seconds.
pub const CONGESTION_MIN_SECONDS: f64 = 10.0;

/// Speed from `at` seconds after spawn until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSegment {
    pub at: f64,
    /// m/s, zero means stopped.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleScript {
    /// Seconds.
    pub spawn: f64,
    /// Lane polyline in world meters; the vehicle center follows it.
    pub path: Vec<[f64; 2]>,
    pub speed: Vec<SpeedSegment>,
    /// Extent along world x and y, meters.
    pub size: [f64; 2],
    pub color: [u8; 3],
}

impl VehicleScript {
    pub fn path_length(&self) -> f64 {
        self.path
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    /// Distance travelled `t` seconds after spawn.
    pub fn distance_at(&self, t: f64) -> f64 {
        let mut d = 0.0;
        for (i, seg) in self.speed.iter().enumerate() {
            if t <= seg.at {
                break;
            }
            let end = self.speed.get(i + 1).map_or(t, |n| n.at.min(t));
            d += seg.speed * (end - seg.at);
        }
        d
    }

    /// Scripted speed `t` seconds after spawn.
    pub fn speed_at(&self, t: f64) -> f64 {
        self.speed
            .iter()
            .rev()
            .find(|s| s.at <= t)
            .map_or(0.0, |s| s.speed)
    }

    pub fn point_at_distance(&self, d: f64) -> [f64; 2] {
        let mut left = d.max(0.0);
        for w in self.path.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if left <= len && len > 0.0 {
                let f = left / len;
                return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
            }
            left -= len;
        }
        *self.path.last().expect("validated path")
    }

    /// World position at absolute time `t`, or `None` before spawn and after the path ends.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        if t < self.spawn {
            return None;
        }
        let d = self.distance_at(t - self.spawn);
        (d <= self.path_length() + 1e-9).then(|| self.point_at_distance(d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Appearance {
    pub road_color: [u8; 3],
    pub ground_color: [u8; 3],
    /// Peak amplitude of the static per-pixel texture.
    pub texture: u8,
    /// Standard deviation of per-frame sensor noise, intensity units.
    pub sensor_noise: f64,
    pub seed: u64,
}

impl Default for Appearance {
    fn default() -> Self {
        Appearance {
            road_color: [96, 96, 100],
            ground_color: [70, 112, 62],
            texture: 4,
            sensor_noise: 1.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub meters_per_pixel: f64,
    /// Road polygon, source pixel coordinates.
    pub road: Vec<[f64; 2]>,
    /// Congestion ROI in source pixel coordinates; the road polygon when absent.
    #[serde(default)]
    pub roi: Option<Vec<[f64; 2]>>,
    /// Referential lines as world y coordinates, meters.
    pub speed_lines_m: [f64; 2],
    #[serde(default)]
    pub appearance: Appearance,
    #[serde(default)]
    pub vehicles: Vec<VehicleScript>,
}

impl SceneScript {
    pub fn roi(&self) -> Result<Roi> {
        Roi::new(self.roi.clone().unwrap_or_else(|| self.road.clone()))
    }

    pub fn validate(&self, spec: &VideoSpec) -> Result<()> {
        spec.validate()?;
        let bad = |m: String| Err(Error::InvalidScript(m));
        if !(self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite()) {
            return bad(format!("meters_per_pixel must be positive, got {}", self.meters_per_pixel));
        }
        Roi::new(self.road.clone()).map_err(|e| Error::InvalidScript(format!("road polygon: {e}")))?;
        self.roi().map_err(|e| Error::InvalidScript(format!("roi: {e}")))?;
        if self.speed_lines_m[0] == self.speed_lines_m[1] {
            return bad("speed lines must be distinct".into());
        }
        let (w, h) = (spec.width as f64, spec.height as f64);
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.path.len() < 2 {
                return bad(format!("vehicle {i}: path needs at least two points"));
            }
            if v.speed.is_empty() {
                return bad(format!("vehicle {i}: empty speed profile"));
            }
            if !(v.spawn >= 0.0 && v.spawn.is_finite()) {
                return bad(format!("vehicle {i}: invalid spawn time {}", v.spawn));
            }
            if v.speed.iter().any(|s| !(s.speed >= 0.0 && s.speed.is_finite() && s.at >= 0.0)) {
                return bad(format!("vehicle {i}: speeds must be finite and nonnegative"));
            }
            if v.speed.windows(2).any(|p| p[1].at <= p[0].at) {
                return bad(format!("vehicle {i}: speed segments must be in increasing time order"));
            }
            if !(v.size[0] > 0.0 && v.size[1] > 0.0) {
                return bad(format!("vehicle {i}: size must be positive"));
            }
            let hw = v.size[0] / 2.0 / self.meters_per_pixel;
            let hh = v.size[1] / 2.0 / self.meters_per_pixel;
            for p in &v.path {
                let (x, y) = (p[0] / self.meters_per_pixel, p[1] / self.meters_per_pixel);
                if x - hw < 0.0 || x + hw > w || y - hh < 0.0 || y + hh > h {
                    return bad(format!(
                        "vehicle {i} leaves the frame at path point ({:.2}, {:.2}) m",
                        p[0], p[1]
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-vehicle ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTruth {
    pub id: usize,
    pub spawn: f64,
    /// Source frame indices where the center crosses the first and the last referential line.
    pub crossing: Option<(usize, usize)>,
    /// Mean world x of the center inside the crossing window, meters.
    pub lane_x_m: f64,
    /// Time-averaged speed between the referential lines, mph.
    pub mean_speed_mph: Option<f64>,
}

/// Scripted ground truth of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub fps: f64,
    pub frame_count: usize,
    pub congestion: Vec<bool>,
    /// Vehicles stopped inside the ROI, per frame.
    pub stopped_in_roi: Vec<usize>,
    pub vehicles: Vec<VehicleTruth>,
    /// Per frame: `(vehicle id, center in source pixels)` of every visible vehicle.
    pub positions: Vec<Vec<(usize, [f64; 2])>>,
}

impl GroundTruth {
    /// Vehicles with a defined speed (those crossing both lines).
    pub fn speed_vehicles(&self) -> impl Iterator<Item = &VehicleTruth> {
        self.vehicles.iter().filter(|v| v.mean_speed_mph.is_some())
    }
}

/// Index of the first sample on the other side of `line` (or on it) relative to the first sample.
pub(crate) fn crossing_index(ys: &[f64], line: f64) -> Option<usize> {
    let side = |y: f64| (y > line) as i8 - (y < line) as i8;
    let first = side(*ys.first()?);
    if first == 0 {
        return Some(0);
    }
    ys.iter().position(|&y| side(y) != first)
}

/// Marks frames where at least `min_vehicles` have been stopped for more than `min_frames` frames.
pub(crate) fn congestion_flags(stopped: &[usize], min_vehicles: usize, min_frames: usize) -> Vec<bool> {
    let mut run = 0usize;
    stopped
        .iter()
        .map(|&n| {
            run = if n >= min_vehicles { run + 1 } else { 0 };
            run > min_frames
        })
        .collect()
}

fn noise_table(sigma: f64) -> [i16; 256] {
    let mut t = [0i16; 256];
    if sigma <= 0.0 {
        return t;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    for (i, v) in t.iter_mut().enumerate() {
        *v = n.inverse_cdf((i as f64 + 0.5) / 256.0).round() as i16;
    }
    t
}

fn texture_offset(seed: u64, idx: usize, amplitude: u8) -> i16 {
    if amplitude == 0 {
        return 0;
    }
    // splitmix64 finalizer as a stateless per-pixel hash
    let mut z = seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let span = 2 * amplitude as u64 + 1;
    (z % span) as i16 - amplitude as i16
}

/// Renders frames of a validated script on demand.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    script: SceneScript,
    spec: VideoSpec,
    base: Vec<u8>,
    noise: [i16; 256],
    truth: GroundTruth,
}

impl SceneRenderer {
    pub fn new(script: SceneScript, spec: VideoSpec) -> Result<Self> {
        script.validate(&spec)?;
        let (w, h) = (spec.width, spec.height);
        let road = Roi::new(script.road.clone())?.rasterize(w, h);
        let app = &script.appearance;
        let mut base = vec![0u8; w * h * 3];
        for (i, px) in base.chunks_exact_mut(3).enumerate() {
            let color = if road.as_slice()[i] { app.road_color } else { app.ground_color };
            let off = texture_offset(app.seed, i, app.texture);
            for c in 0..3 {
                px[c] = (color[c] as i16 + off).clamp(0, 255) as u8;
            }
        }
        let truth = compute_truth(&script, &spec)?;
        Ok(SceneRenderer {
            noise: noise_table(app.sensor_noise),
            script,
            spec,
            base,
            truth,
        })
    }

    pub fn script(&self) -> &SceneScript {
        &self.script
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn render(&self, index: usize) -> Frame {
        let (w, h) = (self.spec.width, self.spec.height);
        let t = self.spec.timestamp(index);
        let mpp = self.script.meters_per_pixel;
        let mut data = self.base.clone();
        for v in &self.script.vehicles {
            let Some([cx, cy]) = v.position_at(t) else { continue };
            let (cx, cy) = (cx / mpp, cy / mpp);
            let (hw, hh) = (v.size[0] / 2.0 / mpp, v.size[1] / 2.0 / mpp);
            // pixels whose centers fall in [c - half, c + half)
            let x0 = ((cx - hw - 0.5).ceil().max(0.0)) as usize;
            let x1 = ((cx + hw - 0.5).ceil().max(0.0) as usize).min(w);
            let y0 = ((cy - hh - 0.5).ceil().max(0.0)) as usize;
            let y1 = ((cy + hh - 0.5).ceil().max(0.0) as usize).min(h);
            for y in y0..y1 {
                for px in data[(y * w + x0) * 3..(y * w + x1) * 3].chunks_exact_mut(3) {
                    px.copy_from_slice(&v.color);
                }
            }
        }
        if self.script.appearance.sensor_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.script.appearance.seed ^ 0x5EED_0F_5CE4E);
            rng.set_stream(index as u64);
            let mut bytes = vec![0u8; data.len()];
            rng.fill_bytes(&mut bytes);
            for (v, b) in data.iter_mut().zip(&bytes) {
                *v = (*v as i16 + self.noise[*b as usize]).clamp(0, 255) as u8;
            }
        }
        Frame::new(index as u64, t, w, h, 3, data).expect("renderer produces consistent frames")
    }
}

impl FrameSource for SceneRenderer {
    fn spec(&self) -> &VideoSpec {
        &self.spec
    }

    fn frame(&self, index: usize) -> Frame {
        self.render(index)
    }
}

fn compute_truth(script: &SceneScript, spec: &VideoSpec) -> Result<GroundTruth> {
    let n = spec.frame_count();
    let mpp = script.meters_per_pixel;
    let roi = script.roi()?;
    let dt = spec.frame_interval();
    let mut positions = vec![Vec::new(); n];
    let mut stopped = vec![0usize; n];
    let mut vehicles = Vec::with_capacity(script.vehicles.len());

    for (id, v) in script.vehicles.iter().enumerate() {
        let mut track: Vec<(usize, [f64; 2])> = Vec::new();
        for (i, slot) in positions.iter_mut().enumerate() {
            let t = spec.timestamp(i);
            if let Some(p) = v.position_at(t) {
                let px = [p[0] / mpp, p[1] / mpp];
                slot.push((id, px));
                track.push((i, p));
                if v.speed_at(t - v.spawn) == 0.0 && roi.contains(px) {
                    stopped[i] += 1;
                }
            }
        }

        let ys: Vec<f64> = track.iter().map(|(_, p)| p[1]).collect();
        let a = crossing_index(&ys, script.speed_lines_m[0]);
        let b = crossing_index(&ys, script.speed_lines_m[1]);
        let (crossing, lane_x_m, mean_speed_mph) = match (a, b) {
            (Some(a), Some(b)) if a != b => {
                let (s, e) = (a.min(b), a.max(b));
                let dist: f64 = track[s..=e]
                    .windows(2)
                    .map(|w| ((w[1].1[0] - w[0].1[0]).powi(2) + (w[1].1[1] - w[0].1[1]).powi(2)).sqrt())
                    .sum();
                let steps = (e - s) as f64;
                let lane = track[s..=e].iter().map(|(_, p)| p[0]).sum::<f64>() / (e - s + 1) as f64;
                (
                    Some((track[s].0, track[e].0)),
                    lane,
                    Some(dist / (steps * dt) * MPS_TO_MPH),
                )
            }
            _ => {
                let lane = if track.is_empty() {
                    v.path[0][0]
                } else {
                    track.iter().map(|(_, p)| p[0]).sum::<f64>() / track.len() as f64
                };
                (None, lane, None)
            }
        };
        vehicles.push(VehicleTruth {
            id,
            spawn: v.spawn,
            crossing,
            lane_x_m,
            mean_speed_mph,
        });
    }

    let min_frames = (CONGESTION_MIN_SECONDS * spec.fps).round() as usize;
    Ok(GroundTruth {
        fps: spec.fps,
        frame_count: n,
        congestion: congestion_flags(&stopped, CONGESTION_MIN_VEHICLES, min_frames),
        stopped_in_roi: stopped,
        vehicles,
        positions,
    })
}

/// Renders every frame of `script` and returns it with the ground truth.
pub fn generate_scene(script: &SceneScript, spec: &VideoSpec) -> Result<(Vec<Frame>, GroundTruth)> {
    let renderer = SceneRenderer::new(script.clone(), *spec)?;
    let frames = (0..renderer.len()).map(|i| renderer.render(i)).collect();
    Ok((frames, renderer.truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_script() -> SceneScript {
        SceneScript {
            meters_per_pixel: 0.1,
            road: vec![[20.0, 0.0], [60.0, 0.0], [60.0, 48.0], [20.0, 48.0]],
            roi: None,
            speed_lines_m: [1.0, 3.5],
            appearance: Appearance::default(),
            vehicles: vec![],
        }
    }

    fn straight(spawn: f64, x: f64, speed: Vec<SpeedSegment>) -> VehicleScript {
        VehicleScript {
            spawn,
            path: vec![[x, 0.3], [x, 4.5]],
            speed,
            size: [0.4, 0.5],
            color: [230, 230, 230],
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let spec = VideoSpec::new(64, 48, 15.0, 2.0).unwrap();
        let mut script = empty_script();
        script.appearance.sensor_noise = 0.0;
        let (frames, truth) = generate_scene(&script, &spec).unwrap();
        assert_eq!(frames.len(), 30);
        assert!(frames.windows(2).all(|w| w[0].data() == w[1].data()));
        assert!(truth.congestion.iter().all(|&c| !c));
        assert!(truth.vehicles.is_empty());
    }

    #[test]
    fn constant_speed_truth_in_mph() {
        let spec = VideoSpec::new(64, 48, 15.0, 3.0).unwrap();
        let mut script = empty_script();
        script.vehicles.push(straight(0.0, 3.0, vec![SpeedSegment { at: 0.0, speed: 3.0 }]));
        let (_, truth) = generate_scene(&script, &spec).unwrap();
        let v = truth.vehicles[0].mean_speed_mph.unwrap();
        assert!((v - 3.0 * 2.23694).abs() < 1e-9, "{v}");
        assert!((v - 6.711).abs() < 1e-3);
    }

    #[test]
    fn rendered_centroid_follows_script() {
        let spec = VideoSpec::new(64, 48, 15.0, 1.0).unwrap();
        let mut script = empty_script();
        script.appearance.sensor_noise = 0.0;
        script.vehicles.push(straight(0.0, 3.0, vec![SpeedSegment { at: 0.0, speed: 3.0 }]));
        let r = SceneRenderer::new(script, spec).unwrap();
        for i in 0..15 {
            let f = r.render(i);
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for y in 0..48 {
                for x in 0..64 {
                    if f.pixel(x, y) == [230, 230, 230] {
                        sx += x as f64 + 0.5;
                        sy += y as f64 + 0.5;
                        n += 1.0;
                    }
                }
            }
            let (_, p) = r.ground_truth().positions[i][0];
            assert!((sx / n - p[0]).abs() <= 1.0 && (sy / n - p[1]).abs() <= 1.0);
        }
    }

    #[test]
    fn leaving_the_frame_is_rejected() {
        let spec = VideoSpec::new(64, 48, 15.0, 1.0).unwrap();
        let mut script = empty_script();
        script.vehicles.push(VehicleScript {
            path: vec![[3.0, 0.3], [3.0, 9.0]],
            ..straight(0.0, 3.0, vec![SpeedSegment { at: 0.0, speed: 3.0 }])
        });
        assert!(matches!(generate_scene(&script, &spec), Err(Error::InvalidScript(_))));
        let mut script = empty_script();
        script.vehicles.push(straight(0.0, 3.0, vec![SpeedSegment { at: 0.0, speed: -1.0 }]));
        assert!(matches!(generate_scene(&script, &spec), Err(Error::InvalidScript(_))));
    }

    #[test]
    fn four_stopped_vehicles_flag_congestion() {
        let spec = VideoSpec::new(64, 48, 15.0, 16.0).unwrap();
        let mut script = empty_script();
        for k in 0..4 {
            script.vehicles.push(VehicleScript {
                path: vec![[2.5 + 0.7 * k as f64, 0.5], [2.5 + 0.7 * k as f64, 4.4]],
                ..straight(
                    0.0,
                    0.0,
                    vec![
                        SpeedSegment { at: 0.0, speed: 1.0 },
                        SpeedSegment { at: 1.0, speed: 0.0 },
                        SpeedSegment { at: 13.0, speed: 1.0 },
                    ],
                )
            });
        }
        let (_, truth) = generate_scene(&script, &spec).unwrap();
        // stopped on frames 15..195 (12 s); flagged once the run exceeds 150 frames
        let flagged: Vec<usize> = (0..truth.frame_count).filter(|&i| truth.congestion[i]).collect();
        assert_eq!(flagged.first(), Some(&(15 + 150)));
        assert_eq!(flagged.last(), Some(&194));
        assert_eq!(flagged.len(), 194 - 165 + 1);

        // three vehicles never flag
        script.vehicles.pop();
        let (_, truth) = generate_scene(&script, &spec).unwrap();
        assert!(truth.congestion.iter().all(|&c| !c));
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = VideoSpec::new(64, 48, 15.0, 1.0).unwrap();
        let mut script = empty_script();
        script.vehicles.push(straight(0.0, 3.0, vec![SpeedSegment { at: 0.0, speed: 3.0 }]));
        let a = SceneRenderer::new(script.clone(), spec).unwrap();
        let b = SceneRenderer::new(script, spec).unwrap();
        for i in [0, 7, 14] {
            assert_eq!(a.render(i), b.render(i));
        }
        assert_ne!(a.render(1).data(), a.render(2).data());
    }
}
