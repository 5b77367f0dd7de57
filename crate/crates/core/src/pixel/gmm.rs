//! Per-pixel Gaussian mixture background model.

use serde::{Deserialize, Serialize};

use super::store::{dispatch_dim, record_blend, record_init, record_m2, sort_records, MixtureStore};
use super::{log_density, log_norm};
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variance: Vec<f64>,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn density(&self, x: &[f64]) -> f64 {
        log_density(x, &self.mean, &self.variance, log_norm(&self.variance)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmParams {
    /// Maximum components per pixel (K).
    pub components: usize,
    pub learning_rate: f64,
    /// Match radius in standard deviations.
    pub match_threshold: f64,
    pub variance_floor: f64,
    pub initial_variance: f64,
    /// Frames during which the learning rate ramps down as `1/(t+1)`.
    pub warmup_frames: u64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            components: 4,
            learning_rate: 0.002,
            match_threshold: 2.5,
            variance_floor: 4.0,
            initial_variance: 36.0,
            warmup_frames: 30,
        }
    }
}

impl GmmParams {
    pub(crate) fn rate_at(&self, frames_seen: u64) -> f64 {
        if frames_seen < self.warmup_frames {
            self.learning_rate.max(1.0 / (frames_seen + 1) as f64)
        } else {
            self.learning_rate
        }
    }
}

/// Mixture of up to K diagonal Gaussians at every pixel, sorted by weight descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMixtureModel {
    pub(crate) params: GmmParams,
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) frames_seen: u64,
    pub(crate) store: MixtureStore,
}

impl PixelMixtureModel {
    pub fn new(width: usize, height: usize, dim: usize, params: GmmParams) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("feature dimension must be 1..=3, got {dim}")));
        }
        if !(1..=255).contains(&params.components) {
            return Err(Error::InvalidArgument(format!(
                "component count must be in 1..=255, got {}",
                params.components
            )));
        }
        if !(params.learning_rate > 0.0 && params.learning_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be in (0,1), got {}",
                params.learning_rate
            )));
        }
        if !(params.variance_floor > 0.0) || params.initial_variance < params.variance_floor {
            return Err(Error::InvalidArgument("variance floor must be positive and below the initial variance".into()));
        }
        Ok(PixelMixtureModel {
            params,
            width,
            height,
            frames_seen: 0,
            store: MixtureStore::new(width * height, params.components, dim),
        })
    }

    /// Builds a model from explicit per-pixel components (row-major pixels).
    /// Components are re-sorted by weight.
    pub fn from_components(
        width: usize,
        height: usize,
        dim: usize,
        params: GmmParams,
        pixels: &[Vec<GaussianComponent>],
    ) -> Result<Self> {
        let mut m = PixelMixtureModel::new(width, height, dim, params)?;
        if pixels.len() != width * height {
            return Err(Error::dims(width * height, pixels.len()));
        }
        for (i, comps) in pixels.iter().enumerate() {
            if comps.is_empty() || comps.len() > params.components {
                return Err(Error::InvalidArgument(format!("pixel {i} has {} components", comps.len())));
            }
            let mut sorted = comps.clone();
            sorted.sort_by(|a, b| b.weight.total_cmp(&a.weight));
            for (s, c) in sorted.iter().enumerate() {
                if c.mean.len() != dim || c.variance.len() != dim {
                    return Err(Error::dims(dim, c.mean.len()));
                }
                m.store.set(i, s, c);
            }
            m.store.count[i] = sorted.len() as u8;
        }
        m.frames_seen = 1;
        Ok(m)
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn is_initialized(&self) -> bool {
        self.frames_seen > 0
    }

    pub fn component_count(&self, x: usize, y: usize) -> usize {
        self.store.count[y * self.width + x] as usize
    }

    pub fn components(&self, x: usize, y: usize) -> Vec<GaussianComponent> {
        self.store.components(y * self.width + x)
    }

    pub(crate) fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.channels() != self.dim() {
            return Err(Error::dims(format!("d = {}", self.dim()), format!("d = {}", frame.channels())));
        }
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", frame.width(), frame.height()),
            ));
        }
        Ok(())
    }

    /// Top component of pixel `i` against `x`: squared Mahalanobis distance,
    /// product of its variances, and its weight `w_1`.
    #[inline]
    pub(crate) fn top<const D: usize>(&self, i: usize, x: &[f64; D]) -> (f64, f64, f64) {
        let st = 1 + 2 * D;
        let off = i * self.store.k * st;
        let rec = &self.store.data[off..off + st];
        let (mut m2, mut prod) = (0.0, 1.0);
        for c in 0..D {
            let diff = x[c] - rec[1 + c];
            m2 += diff * diff / rec[1 + D + c];
            prod *= rec[1 + D + c];
        }
        (m2, prod, rec[0])
    }

    /// Log density of the largest-weight component at pixel index `i` and its weight `w_1`.
    pub(crate) fn log_background(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let d = self.dim();
        let rec = &self.store.block(i)[..1 + 2 * d];
        let var = &rec[1 + d..];
        (log_density(x, &rec[1..1 + d], var, log_norm(var)), rec[0])
    }

    /// `p_ij(x | background)` from the largest-weight component and the prior `w_1`.
    pub fn background_density(&self, x: &[f64], i: usize, j: usize) -> (f64, f64) {
        let (lp, w) = self.log_background(j * self.width + i, x);
        (lp.exp(), w)
    }

    /// Updates one pixel with feature `x` at learning rate `rate`.
    #[inline]
    pub(crate) fn update_pixel<const D: usize>(&mut self, i: usize, x: &[f64; D], rate: f64) {
        let st = 1 + 2 * D;
        let k = self.params.components;
        let init_var = self.params.initial_variance;
        let floor = self.params.variance_floor;
        let thr2 = self.params.match_threshold * self.params.match_threshold;
        let (count, block) = self.store.block_mut(i);
        let mut n = *count as usize;
        if n == 0 {
            record_init(&mut block[..st], x, 1.0, init_var);
            *count = 1;
            return;
        }
        let matched = (0..n).find(|&s| record_m2(&block[s * st..(s + 1) * st], x) <= thr2);
        for s in 0..n {
            block[s * st] *= 1.0 - rate;
        }
        match matched {
            Some(s) => {
                let rec = &mut block[s * st..(s + 1) * st];
                rec[0] += rate;
                let rho = (rate / rec[0]).min(1.0);
                record_blend(rec, x, rho, floor);
            }
            None => {
                let s = if n < k {
                    n += 1;
                    n - 1
                } else {
                    k - 1
                };
                record_init(&mut block[s * st..(s + 1) * st], x, rate, init_var);
                *count = n as u8;
            }
        }
        let total: f64 = (0..n).map(|s| block[s * st]).sum();
        for s in 0..n {
            block[s * st] /= total;
        }
        sort_records::<D>(block, n);
    }

    fn update_d<const D: usize>(&mut self, frame: &Frame) {
        let rate = self.params.rate_at(self.frames_seen);
        for (i, px) in frame.data().chunks_exact(D).enumerate() {
            let x: [f64; D] = std::array::from_fn(|c| px[c] as f64);
            self.update_pixel(i, &x, rate);
        }
        self.frames_seen += 1;
    }

    /// Feeds one frame into the model.
    pub fn update(&mut self, frame: &Frame) -> Result<()> {
        self.check_frame(frame)?;
        dispatch_dim!(self.dim(), D => self.update_d::<D>(frame));
        Ok(())
    }
}

/// Free function form of [`PixelMixtureModel::update`].
pub fn update_background(model: &mut PixelMixtureModel, frame: &Frame) -> Result<()> {
    model.update(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: u8) -> Frame {
        Frame::filled(0, 0.0, 1, 1, &[v]).unwrap()
    }

    #[test]
    fn stationary_convergence() {
        let mut m = PixelMixtureModel::new(1, 1, 1, GmmParams::default()).unwrap();
        for _ in 0..500 {
            m.update(&single(120)).unwrap();
        }
        let c = &m.components(0, 0)[0];
        assert!((c.mean[0] - 120.0).abs() < 0.5);
        assert!((c.weight - 1.0).abs() < 0.05);
        assert!(c.variance[0] >= m.params().variance_floor);
    }

    #[test]
    fn alternating_values_match_ema_fixed_point() {
        let params = GmmParams {
            learning_rate: 0.01,
            ..GmmParams::default()
        };
        let mut m = PixelMixtureModel::new(1, 1, 1, params).unwrap();
        // analytic weight recursion of the second component, simulated independently
        let mut w2 = 0.0f64;
        for t in 0..1000u64 {
            let v = if t % 2 == 0 { 60 } else { 180 };
            m.update(&single(v)).unwrap();
            let a = params.rate_at(t);
            if t == 1 {
                w2 = a;
            } else if t > 1 {
                w2 = (1.0 - a) * w2 + if v == 180 { a } else { 0.0 };
            }
        }
        let comps = m.components(0, 0);
        assert_eq!(comps.len(), 2);
        for c in &comps {
            assert!((c.weight - 0.5).abs() < 0.1, "{comps:?}");
        }
        let high = comps.iter().find(|c| c.mean[0] > 120.0).unwrap();
        assert!((high.weight - w2).abs() < 1e-9, "{} vs {w2}", high.weight);
    }

    #[test]
    fn weights_normalized_and_sorted() {
        let mut m = PixelMixtureModel::new(4, 1, 3, GmmParams::default()).unwrap();
        let mut seed = 1u32;
        for t in 0..300u64 {
            let data: Vec<u8> = (0..12)
                .map(|_| {
                    seed = seed.wrapping_mul(1_103_515_245).wrapping_add(12345);
                    (seed >> 16) as u8
                })
                .collect();
            m.update(&Frame::new(t, 0.0, 4, 1, 3, data).unwrap()).unwrap();
            for x in 0..4 {
                let comps = m.components(x, 0);
                let s: f64 = comps.iter().map(|c| c.weight).sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(comps.windows(2).all(|w| w[0].weight >= w[1].weight));
                assert!(comps.iter().all(|c| c.variance.iter().all(|&v| v >= 4.0)));
                assert!((1..=4).contains(&comps.len()));
            }
        }
    }

    #[test]
    fn background_density_peak_and_tail() {
        let comp = GaussianComponent {
            mean: vec![100.0, 50.0, 20.0],
            variance: vec![4.0, 9.0, 16.0],
            weight: 1.0,
        };
        let m = PixelMixtureModel::from_components(1, 1, 3, GmmParams::default(), &[vec![comp.clone()]]).unwrap();
        let (p, prior) = m.background_density(&comp.mean, 0, 0);
        let peak = (2.0 * std::f64::consts::PI).powf(-1.5) / (4.0f64 * 9.0 * 16.0).sqrt();
        assert!((p - peak).abs() < 1e-15);
        assert_eq!(prior, 1.0);
        let far = [100.0 + 7.0 * 2.0, 50.0, 20.0];
        let (p_far, _) = m.background_density(&far, 0, 0);
        assert!(p_far < 1e-6 * peak);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut m = PixelMixtureModel::new(2, 2, 1, GmmParams::default()).unwrap();
        let f = Frame::filled(0, 0.0, 2, 2, &[1, 2, 3]).unwrap();
        assert!(matches!(m.update(&f), Err(Error::DimensionMismatch { .. })));
    }
}
