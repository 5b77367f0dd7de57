//! Desk-scale scene builders: a four-lane road with free-flowing traffic in
//! two lanes and recurring queues in the other two.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frame::VideoSpec;
use crate::scene::{Appearance, SceneScript, SpeedSegment, VehicleScript};

pub const SOURCE_WIDTH: usize = 640;
pub const SOURCE_HEIGHT: usize = 360;
pub const METERS_PER_PIXEL: f64 = 0.1;
pub const VEHICLE_SIZE: [f64; 2] = [2.0, 4.5];

/// Lane centers (world x, meters) of traffic moving toward larger y.
pub const FLOW_LANES: [f64; 2] = [17.0, 23.0];
/// Lane centers of traffic moving toward smaller y, where queues form.
pub const QUEUE_LANES: [f64; 2] = [41.0, 47.0];
/// Referential lines, world y in meters.
pub const SPEED_LINES: [f64; 2] = [17.0, 30.0];

const FLOW_START: f64 = 3.0;
const FLOW_END: f64 = 33.0;
const QUEUE_START: f64 = 33.5;
const QUEUE_END: f64 = 2.5;
/// Where the first and second vehicle of a queue come to rest.
const QUEUE_STOPS: [f64; 2] = [4.5, 11.5];
const QUEUE_SPEED: f64 = 8.0;
const MIN_CENTER_GAP: f64 = 7.5;

pub const PALETTE: [[u8; 3]; 6] = [
    [25, 25, 30],
    [225, 225, 230],
    [170, 172, 178],
    [120, 20, 25],
    [20, 30, 90],
    [230, 200, 40],
];

/// Road polygon (source pixels) covering all four lanes.
pub fn road_polygon() -> Vec<[f64; 2]> {
    let (x0, x1) = (120.0, 520.0);
    vec![[x0, 0.0], [x1, 0.0], [x1, SOURCE_HEIGHT as f64], [x0, SOURCE_HEIGHT as f64]]
}

pub fn video_spec(duration: f64) -> VideoSpec {
    VideoSpec {
        width: SOURCE_WIDTH,
        height: SOURCE_HEIGHT,
        fps: 15.0,
        duration,
    }
}

fn base_script(seed: u64) -> SceneScript {
    SceneScript {
        meters_per_pixel: METERS_PER_PIXEL,
        road: road_polygon(),
        roi: None,
        speed_lines_m: SPEED_LINES,
        appearance: Appearance {
            seed: seed.wrapping_mul(0x9E37_79B9).wrapping_add(7),
            ..Appearance::default()
        },
        vehicles: Vec::new(),
    }
}

/// A vehicle on a straight lane at constant speed.
pub fn cruising(spawn: f64, lane: f64, speed: f64, color: [u8; 3]) -> VehicleScript {
    VehicleScript {
        spawn,
        path: vec![[lane, FLOW_START], [lane, FLOW_END]],
        speed: vec![SpeedSegment { at: 0.0, speed }],
        size: VEHICLE_SIZE,
        color,
    }
}

/// A vehicle that drives up a queue lane, rests at `stop_y` for `stop_s`
/// seconds starting at absolute time `stop_at`, then leaves.
fn queued(spawn: f64, lane: f64, stop_y: f64, stop_at: f64, stop_s: f64, color: [u8; 3]) -> VehicleScript {
    let arrive = spawn + (QUEUE_START - stop_y) / QUEUE_SPEED;
    let rest_from = arrive.min(stop_at) - spawn;
    let rest_until = stop_at + stop_s - spawn;
    VehicleScript {
        spawn,
        path: vec![[lane, QUEUE_START], [lane, stop_y], [lane, QUEUE_END]],
        speed: vec![
            SpeedSegment { at: 0.0, speed: QUEUE_SPEED },
            SpeedSegment { at: rest_from, speed: 0.0 },
            SpeedSegment {
                at: rest_until,
                speed: QUEUE_SPEED,
            },
        ],
        size: VEHICLE_SIZE,
        color,
    }
}

/// Four vehicles (two per queue lane) stopped together for `stop_s` seconds.
/// Returns the vehicles and the instant the last of them comes to rest.
pub fn queue_event(start: f64, stop_s: f64, colors: [[u8; 3]; 4]) -> (Vec<VehicleScript>, f64) {
    let mut out = Vec::new();
    let lead = (QUEUE_START - QUEUE_STOPS[0]) / QUEUE_SPEED;
    let follow_spawn = start + MIN_CENTER_GAP / QUEUE_SPEED + 0.1;
    let follow = follow_spawn + (QUEUE_START - QUEUE_STOPS[1]) / QUEUE_SPEED;
    let rest = (start + lead).max(follow);
    for (k, &lane) in QUEUE_LANES.iter().enumerate() {
        out.push(queued(start, lane, QUEUE_STOPS[0], start + lead, rest + stop_s - (start + lead), colors[2 * k]));
        out.push(queued(follow_spawn, lane, QUEUE_STOPS[1], follow, rest + stop_s - follow, colors[2 * k + 1]));
    }
    (out, rest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskScenario {
    pub duration: f64,
    pub seed: u64,
    /// Mean extra headway between flow vehicles, seconds.
    pub mean_headway: f64,
    pub speed_range: [f64; 2],
    /// First queue event start and spacing, seconds. No queues when spacing is zero.
    pub queue_start: f64,
    pub queue_period: f64,
    pub stop_range: [f64; 2],
}

impl Default for DeskScenario {
    fn default() -> Self {
        DeskScenario {
            duration: 60.0,
            seed: 1,
            mean_headway: 2.5,
            speed_range: [6.0, 11.0],
            queue_start: 4.0,
            queue_period: 20.0,
            stop_range: [12.0, 14.0],
        }
    }
}

impl DeskScenario {
    pub fn spec(&self) -> VideoSpec {
        video_spec(self.duration)
    }

    pub fn build(&self) -> SceneScript {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut script = base_script(self.seed);
        let path_len = FLOW_END - FLOW_START;
        for &lane in &FLOW_LANES {
            let mut prev: Option<(f64, f64)> = None;
            let mut t = rng.gen_range(0.0..self.mean_headway.max(0.1));
            loop {
                let speed = rng.gen_range(self.speed_range[0]..=self.speed_range[1]);
                if let Some((tp, vp)) = prev {
                    let clear_spawn = tp + MIN_CENTER_GAP / vp;
                    let no_catch_up = tp + path_len / vp - (path_len - MIN_CENTER_GAP) / speed;
                    t = t.max(clear_spawn).max(no_catch_up);
                }
                // leave room to cross both lines before the run ends
                if t + path_len / speed > self.duration {
                    break;
                }
                let color = *PALETTE.choose(&mut rng).unwrap();
                script.vehicles.push(cruising(t, lane, speed, color));
                prev = Some((t, speed));
                t += rng.gen_range(0.0..2.0 * self.mean_headway);
            }
        }
        if self.queue_period > 0.0 {
            let mut start = self.queue_start;
            loop {
                let stop = rng.gen_range(self.stop_range[0]..=self.stop_range[1]);
                let colors = [0; 4].map(|_| *PALETTE.choose(&mut rng).unwrap());
                let (vehicles, rest) = queue_event(start, stop, colors);
                if rest + stop + 3.0 > self.duration {
                    break;
                }
                script.vehicles.extend(vehicles);
                start += self.queue_period;
            }
        }
        script.vehicles.sort_by(|a, b| a.spawn.total_cmp(&b.spawn));
        script
    }
}

/// `count` vehicles in the flow lanes, well separated, at distinct speeds.
pub fn speed_scene(count: usize, seed: u64) -> SceneScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut script = base_script(seed);
    for k in 0..count {
        let lane = FLOW_LANES[k % 2];
        let speed = 6.0 + 5.0 * k as f64 / count.max(2) as f64 + rng.gen_range(0.0..0.5);
        let color = PALETTE[(k + 1) % PALETTE.len()];
        script.vehicles.push(cruising(4.0 + 9.0 * k as f64, lane, speed, color));
    }
    script
}

/// One congestion event of four vehicles resting `stop_s` seconds, with no
/// other traffic. Returns the script and the instant all four are at rest.
pub fn congestion_scene(stop_s: f64, start: f64, seed: u64) -> (SceneScript, f64) {
    let mut script = base_script(seed);
    let (vehicles, rest) = queue_event(start, stop_s, [PALETTE[0], PALETTE[2], PALETTE[4], PALETTE[5]]);
    script.vehicles = vehicles;
    (script, rest)
}

/// A single vehicle resting `stop_s` seconds in a queue lane.
pub fn single_stop_scene(stop_s: f64, start: f64, seed: u64) -> (SceneScript, f64) {
    let mut script = base_script(seed);
    let arrive = start + (QUEUE_START - QUEUE_STOPS[1]) / QUEUE_SPEED;
    script
        .vehicles
        .push(queued(start, QUEUE_LANES[0], QUEUE_STOPS[1], arrive, stop_s, PALETTE[1]));
    (script, arrive)
}

/// Free-flowing traffic only.
pub fn free_flow_scene(duration: f64, seed: u64) -> SceneScript {
    DeskScenario {
        duration,
        seed,
        queue_period: 0.0,
        ..DeskScenario::default()
    }
    .build()
}
