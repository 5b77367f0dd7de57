//! Adaptive-component mixture background model in the style of Zivkovic's
//! method: components whose weight falls below zero are pruned and a
//! long-stationary object is absorbed into the background.

use serde::{Deserialize, Serialize};

use super::store::{dispatch_dim, record_blend, record_init, record_m2, sort_records, MixtureStore};
use super::GaussianComponent;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::pixel::ForegroundMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZivkovicParams {
    pub max_components: usize,
    /// Seconds a stationary object needs to become background.
    pub absorption_seconds: f64,
    /// Fraction of the data allowed to belong to foreground (c_f).
    pub foreground_fraction: f64,
    /// Complexity-reduction prior (c_T).
    pub complexity_prior: f64,
    /// Match radius in standard deviations.
    pub match_threshold: f64,
    pub initial_variance: f64,
    pub variance_floor: f64,
    pub warmup_frames: u64,
}

impl Default for ZivkovicParams {
    fn default() -> Self {
        ZivkovicParams {
            max_components: 4,
            absorption_seconds: 5.0,
            foreground_fraction: 0.1,
            complexity_prior: 0.05,
            match_threshold: 3.0,
            initial_variance: 36.0,
            variance_floor: 4.0,
            warmup_frames: 30,
        }
    }
}

impl ZivkovicParams {
    /// Per-frame learning rate for which a new constant value crosses the
    /// background mass threshold after exactly the absorption time.
    pub fn learning_rate(&self, fps: f64) -> f64 {
        let frames = (self.absorption_seconds * fps).max(1.0);
        1.0 - (1.0 - self.foreground_fraction).powf(1.0 / frames)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZivkovicModel {
    pub(crate) params: ZivkovicParams,
    pub(crate) rate: f64,
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) frames_seen: u64,
    pub(crate) store: MixtureStore,
}

impl ZivkovicModel {
    pub fn new(width: usize, height: usize, dim: usize, fps: f64, params: ZivkovicParams) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("feature dimension must be 1..=3, got {dim}")));
        }
        if !(1..=255).contains(&params.max_components) {
            return Err(Error::InvalidArgument("component count must be in 1..=255".into()));
        }
        if !(params.absorption_seconds > 0.0) || !(fps > 0.0) {
            return Err(Error::InvalidArgument("absorption time and fps must be positive".into()));
        }
        if !(params.foreground_fraction > 0.0 && params.foreground_fraction < 1.0) {
            return Err(Error::InvalidArgument("foreground fraction must be in (0,1)".into()));
        }
        if !(params.variance_floor > 0.0) || params.initial_variance < params.variance_floor {
            return Err(Error::InvalidArgument("variance floor must be positive and below the initial variance".into()));
        }
        Ok(ZivkovicModel {
            params,
            rate: params.learning_rate(fps),
            width,
            height,
            frames_seen: 0,
            store: MixtureStore::new(width * height, params.max_components, dim),
        })
    }

    pub fn params(&self) -> &ZivkovicParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    pub fn learning_rate(&self) -> f64 {
        self.rate
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn components(&self, x: usize, y: usize) -> Vec<GaussianComponent> {
        self.store.components(y * self.width + x)
    }

    fn rate_now(&self) -> f64 {
        if self.frames_seen < self.params.warmup_frames {
            self.rate.max(1.0 / (self.frames_seen + 1) as f64)
        } else {
            self.rate
        }
    }

    /// Whether `x` is explained by the background subset of pixel `i`:
    /// the heaviest components whose cumulative weight first exceeds `1 - c_f`.
    fn is_background<const D: usize>(&self, i: usize, x: &[f64; D]) -> bool {
        let st = 1 + 2 * D;
        let block = self.store.block(i);
        let thr2 = self.params.match_threshold * self.params.match_threshold;
        let limit = 1.0 - self.params.foreground_fraction;
        let mut cum = 0.0;
        for s in 0..self.store.count[i] as usize {
            let rec = &block[s * st..(s + 1) * st];
            if record_m2(rec, x) <= thr2 {
                return true;
            }
            cum += rec[0];
            if cum > limit {
                break;
            }
        }
        false
    }

    /// Classifies pixel `i` against the current state, then updates it.
    /// Returns whether `x` was foreground.
    #[inline]
    fn step_pixel<const D: usize>(&mut self, i: usize, x: &[f64; D], rate: f64) -> bool {
        let st = 1 + 2 * D;
        let k = self.params.max_components;
        let init_var = self.params.initial_variance;
        let floor = self.params.variance_floor;
        let thr2 = self.params.match_threshold * self.params.match_threshold;
        let limit = 1.0 - self.params.foreground_fraction;
        let prune = rate * self.params.complexity_prior;
        let (count, block) = self.store.block_mut(i);
        let mut n = *count as usize;
        if n == 0 {
            record_init(&mut block[..st], x, 1.0, init_var);
            *count = 1;
            return true;
        }
        // first matching component, and whether it lies in the background subset
        let mut matched = None;
        let mut in_background = true;
        let mut cum = 0.0;
        for s in 0..n {
            let rec = &block[s * st..(s + 1) * st];
            if record_m2(rec, x) <= thr2 {
                matched = Some(s);
                break;
            }
            cum += rec[0];
            if cum > limit {
                in_background = false;
            }
        }
        let foreground = matched.is_none() || !in_background;

        for s in 0..n {
            let owned = if matched == Some(s) { 1.0 } else { 0.0 };
            let w = &mut block[s * st];
            *w += rate * (owned - *w) - prune;
        }
        if let Some(s) = matched {
            let rec = &mut block[s * st..(s + 1) * st];
            let rho = (rate / rec[0].max(rate)).min(1.0);
            record_blend(rec, x, rho, floor);
        }
        // drop components whose weight went negative, keeping order
        let mut kept = 0;
        for s in 0..n {
            if block[s * st] > 0.0 {
                if kept != s {
                    block.copy_within(s * st..(s + 1) * st, kept * st);
                }
                kept += 1;
            }
        }
        n = kept;
        if matched.is_none() || n == 0 {
            let s = if n < k {
                n += 1;
                n - 1
            } else {
                k - 1
            };
            let w = if n == 1 { 1.0 } else { rate };
            record_init(&mut block[s * st..(s + 1) * st], x, w, init_var);
        }
        *count = n as u8;
        let total: f64 = (0..n).map(|s| block[s * st]).sum();
        for s in 0..n {
            block[s * st] /= total;
        }
        sort_records::<D>(block, n);
        foreground
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        let d = self.dim();
        if frame.channels() != d || frame.width() != self.width || frame.height() != self.height {
            return Err(Error::dims(
                format!("{}x{}x{}", self.width, self.height, d),
                format!("{}x{}x{}", frame.width(), frame.height(), frame.channels()),
            ));
        }
        Ok(())
    }

    fn apply_d<const D: usize>(&mut self, frame: &Frame, out: &mut [u8]) {
        let rate = self.rate_now();
        let first = self.frames_seen == 0;
        for (i, px) in frame.data().chunks_exact(D).enumerate() {
            let x: [f64; D] = std::array::from_fn(|c| px[c] as f64);
            let fg = self.step_pixel(i, &x, rate);
            out[i] = (fg && !first) as u8;
        }
        self.frames_seen += 1;
    }

    /// Classifies the frame against the current model, then updates the model with it.
    pub fn apply(&mut self, frame: &Frame) -> Result<ForegroundMask> {
        self.check_frame(frame)?;
        let mut mask = ForegroundMask::zeros(self.width, self.height, frame.index);
        dispatch_dim!(self.dim(), D => self.apply_d::<D>(frame, mask.as_mut_slice()));
        Ok(mask)
    }

    fn classify_d<const D: usize>(&self, frame: &Frame, out: &mut [u8]) {
        for (i, px) in frame.data().chunks_exact(D).enumerate() {
            let x: [f64; D] = std::array::from_fn(|c| px[c] as f64);
            out[i] = !self.is_background(i, &x) as u8;
        }
    }

    /// Classification only; the model is not modified.
    pub fn classify(&self, frame: &Frame) -> Result<ForegroundMask> {
        self.check_frame(frame)?;
        let mut mask = ForegroundMask::zeros(self.width, self.height, frame.index);
        if self.frames_seen > 0 {
            dispatch_dim!(self.dim(), D => self.classify_d::<D>(frame, mask.as_mut_slice()));
        }
        Ok(mask)
    }
}
