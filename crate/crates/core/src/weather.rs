//! Parameterized weather degradation: streaks, specks, blur and illumination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherKind {
    Sunny,
    Rainy,
    Snowy,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 3] = [WeatherKind::Sunny, WeatherKind::Rainy, WeatherKind::Snowy];

    pub fn name(self) -> &'static str {
        match self {
            WeatherKind::Sunny => "sunny",
            WeatherKind::Rainy => "rainy",
            WeatherKind::Snowy => "snowy",
        }
    }
}

impl std::fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WeatherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sunny" => Ok(WeatherKind::Sunny),
            "rainy" => Ok(WeatherKind::Rainy),
            "snowy" => Ok(WeatherKind::Snowy),
            other => Err(format!("unknown weather '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherModel {
    pub kind: WeatherKind,
    /// Fraction of pixels overwritten per frame.
    pub noise_density: f64,
    /// Streak length (rain) or speck edge (snow), pixels.
    pub speck_size: usize,
    /// Box blur radius, pixels.
    pub blur_radius: usize,
    pub illumination: f64,
    pub seed: u64,
}

impl WeatherModel {
    pub fn sunny() -> Self {
        WeatherModel {
            kind: WeatherKind::Sunny,
            noise_density: 0.0,
            speck_size: 0,
            blur_radius: 0,
            illumination: 1.0,
            seed: 0,
        }
    }

    pub fn rainy(seed: u64) -> Self {
        WeatherModel {
            kind: WeatherKind::Rainy,
            noise_density: 0.01,
            speck_size: 6,
            blur_radius: 1,
            illumination: 0.9,
            seed,
        }
    }

    pub fn snowy(seed: u64) -> Self {
        WeatherModel {
            kind: WeatherKind::Snowy,
            noise_density: 0.03,
            speck_size: 2,
            blur_radius: 2,
            illumination: 1.15,
            seed,
        }
    }

    pub fn preset(kind: WeatherKind, seed: u64) -> Self {
        match kind {
            WeatherKind::Sunny => WeatherModel::sunny(),
            WeatherKind::Rainy => WeatherModel::rainy(seed),
            WeatherKind::Snowy => WeatherModel::snowy(seed),
        }
    }

    fn rng_for(&self, frame: &Frame) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame.index);
        rng
    }

    /// Picks exactly `floor(density * W * H)` distinct pixels, grouped into
    /// streaks (vertical runs) or square specks.
    pub fn noise_pixels(&self, frame: &Frame) -> Vec<usize> {
        let (w, h) = (frame.width(), frame.height());
        let target = ((self.noise_density.clamp(0.0, 1.0) * (w * h) as f64).floor() as usize).min(w * h);
        let mut marked = vec![false; w * h];
        let mut picked = Vec::with_capacity(target);
        let mut rng = self.rng_for(frame);
        let size = self.speck_size.max(1);
        let (sw, sh) = match self.kind {
            WeatherKind::Rainy => (1, size),
            _ => (size, size),
        };
        while picked.len() < target {
            let x0 = rng.gen_range(0..w);
            let y0 = rng.gen_range(0..h);
            'speck: for y in y0..(y0 + sh).min(h) {
                for x in x0..(x0 + sw).min(w) {
                    if picked.len() == target {
                        break 'speck;
                    }
                    let i = y * w + x;
                    if !marked[i] {
                        marked[i] = true;
                        picked.push(i);
                    }
                }
            }
        }
        picked
    }

    /// Overwrites the noise pixels without blur or illumination change.
    pub fn apply_noise(&self, frame: &Frame) -> Frame {
        let mut out = frame.clone();
        if self.kind == WeatherKind::Sunny {
            return out;
        }
        let ch = frame.channels();
        let pixels = self.noise_pixels(frame);
        let mut rng = self.rng_for(frame);
        // skip the positions already drawn so the value stream is independent
        rng.set_word_pos(1 << 40);
        let data = out.data_mut();
        for i in pixels {
            let px = &mut data[i * ch..(i + 1) * ch];
            match self.kind {
                WeatherKind::Rainy => {
                    // translucent bright streak
                    for v in px.iter_mut() {
                        *v = ((*v as u16 + 170) / 2) as u8;
                    }
                }
                WeatherKind::Snowy => {
                    let v = rng.gen_range(225..=255u8);
                    px.iter_mut().for_each(|p| *p = v);
                }
                WeatherKind::Sunny => unreachable!(),
            }
        }
        out
    }

    pub fn apply(&self, frame: &Frame) -> Frame {
        if self.kind == WeatherKind::Sunny {
            return frame.clone();
        }
        let mut out = self.apply_noise(frame);
        if self.blur_radius > 0 {
            box_blur(&mut out, self.blur_radius);
        }
        if self.illumination != 1.0 {
            let lut: Vec<u8> = (0..=255u8)
                .map(|v| (v as f64 * self.illumination).round().clamp(0.0, 255.0) as u8)
                .collect();
            for v in out.data_mut() {
                *v = lut[*v as usize];
            }
        }
        out
    }
}

/// Free function form of [`WeatherModel::apply`].
pub fn apply_weather(frame: &Frame, model: &WeatherModel) -> Frame {
    model.apply(frame)
}

/// Separable box blur with clamped borders.
pub fn box_blur(frame: &mut Frame, radius: usize) {
    let (w, h, ch) = (frame.width(), frame.height(), frame.channels());
    if radius == 0 || w == 0 || h == 0 {
        return;
    }
    let norm = (2 * radius + 1) as u32;
    let r = radius as isize;
    // running window sum over a clamped line of `n` samples
    let blur_line = |get: &dyn Fn(usize) -> u8, n: usize, put: &mut dyn FnMut(usize, u8)| {
        let at = |i: isize| get(i.clamp(0, n as isize - 1) as usize) as u32;
        let mut s: u32 = (-r..=r).map(at).sum();
        for i in 0..n {
            put(i, ((s + norm / 2) / norm) as u8);
            let i = i as isize;
            s = s + at(i + r + 1) - at(i - r);
        }
    };
    let src: Vec<u8> = frame.data().to_vec();
    let mut tmp = vec![0u8; src.len()];
    for y in 0..h {
        for c in 0..ch {
            let row = y * w * ch + c;
            blur_line(&|x| src[row + x * ch], w, &mut |x, v| tmp[row + x * ch] = v);
        }
    }
    let data = frame.data_mut();
    for x in 0..w {
        for c in 0..ch {
            let col = x * ch + c;
            blur_line(&|y| tmp[col + y * w * ch], h, &mut |y, v| data[col + y * w * ch] = v);
        }
    }
}
