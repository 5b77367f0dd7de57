//! Bayes classification of pixels against the per-pixel background mixture
//! and the global foreground model.

use serde::{Deserialize, Serialize};

use super::store::dispatch_dim;
use super::{ForegroundMask, LN_2PI, GfmParams, GlobalForegroundModel, GmmParams, PixelMixtureModel};
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Background,
    Foreground,
}

/// One side of the Bayes rule: a class-conditional density and its prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub density: f64,
    pub prior: f64,
}

impl Posterior {
    pub fn new(density: f64, prior: f64) -> Self {
        Posterior { density, prior }
    }

    pub fn value(&self) -> f64 {
        self.density * self.prior
    }
}

/// Foreground iff the foreground side strictly exceeds the background side.
pub fn classify_pixel(background: Posterior, foreground: Posterior) -> Class {
    if foreground.value() > background.value() {
        Class::Foreground
    } else {
        Class::Background
    }
}

const SCREEN_MARGIN: f64 = 1e-6;

/// Upper bound on `ln z` for positive finite `z`, within 0.31 of the true value.
#[inline]
fn ln_upper(z: f64) -> f64 {
    if !(z > 0.0 && z.is_finite()) || z < f64::MIN_POSITIVE {
        return if z > 0.0 { z.ln() } else { f64::NEG_INFINITY };
    }
    let bits = z.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mant = f64::from_bits((bits & ((1u64 << 52) - 1)) | (1023u64 << 52));
    exp as f64 * std::f64::consts::LN_2 + (mant - 1.0)
}

/// Log-domain decision for pixel `i`. The foreground prior is `1 - w_1`.
///
/// `fg_bound` must bound every log foreground density of `gfm`. Pixels whose
/// background side provably beats that bound are decided with cheap log
/// bounds, which never changes the outcome.
#[inline]
fn decide<const D: usize>(gmm: &PixelMixtureModel, gfm: &GlobalForegroundModel, fg_bound: f64, i: usize, x: &[f64; D]) -> bool {
    let (m2, var_prod, w1) = gmm.top(i, x);
    let half_const = 0.5 * D as f64 * LN_2PI;
    let bg_low = -half_const - 0.5 * ln_upper(var_prod) - 0.5 * m2;
    if fg_bound + ln_upper((1.0 - w1) / w1) + SCREEN_MARGIN <= bg_low {
        return false;
    }
    let log_bg = -0.5 * (D as f64 * LN_2PI + var_prod.ln()) - 0.5 * m2;
    let bg_side = log_bg + w1.ln();
    let log_fg_prior = (1.0 - w1).ln();
    if fg_bound + log_fg_prior <= bg_side {
        return false;
    }
    match gfm.best(x) {
        Some((_, log_fg)) => log_fg.max(gfm.log_floor()) + log_fg_prior > bg_side,
        None => false,
    }
}

fn check_pair(gmm: &PixelMixtureModel, gfm: &GlobalForegroundModel) -> Result<()> {
    if gmm.dim() != gfm.dim() {
        return Err(Error::dims(format!("d = {}", gmm.dim()), format!("d = {}", gfm.dim())));
    }
    Ok(())
}

/// Classifies every pixel of `frame` against fixed model states.
pub fn detect_mask_gfm(gmm: &PixelMixtureModel, gfm: &GlobalForegroundModel, frame: &Frame) -> Result<ForegroundMask> {
    gmm.check_frame(frame)?;
    check_pair(gmm, gfm)?;
    let mut mask = ForegroundMask::zeros(frame.width(), frame.height(), frame.index);
    if !gmm.is_initialized() || gfm.is_empty() {
        return Ok(mask);
    }
    fn run<const D: usize>(gmm: &PixelMixtureModel, gfm: &GlobalForegroundModel, frame: &Frame, out: &mut [u8]) {
        let bound = gfm.max_log_norm();
        for (i, px) in frame.data().chunks_exact(D).enumerate() {
            let x: [f64; D] = std::array::from_fn(|c| px[c] as f64);
            out[i] = decide(gmm, gfm, bound, i, &x) as u8;
        }
    }
    let out = mask.as_mut_slice();
    dispatch_dim!(gmm.dim(), D => run::<D>(gmm, gfm, frame, out));
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub gmm: GmmParams,
    pub gfm: GfmParams,
}

/// Pixel and feature-scalar touch counts accumulated by a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkCounters {
    pub frames: u64,
    pub pixels: u64,
    pub scalars: u64,
}

impl WorkCounters {
    pub fn pixels_per_frame(&self) -> u64 {
        self.pixels.checked_div(self.frames).unwrap_or(0)
    }

    pub fn scalars_per_frame(&self) -> u64 {
        self.scalars.checked_div(self.frames).unwrap_or(0)
    }
}

/// Background mixture plus global foreground model, classified and updated
/// in a single pass per frame.
///
/// Each frame is classified against the models as they stood after the
/// previous frame. During the bootstrap phase (the first configured frames,
/// or while the foreground model is still empty) pixels outside the match
/// radius of their top background component feed the foreground model;
/// afterwards only pixels classified foreground do.
#[derive(Debug, Clone)]
pub struct ForegroundDetector {
    pub(crate) gmm: PixelMixtureModel,
    pub(crate) gfm: GlobalForegroundModel,
    pub(crate) frames: u64,
    pub(crate) counters: WorkCounters,
    samples: Vec<[f64; 3]>,
}

impl ForegroundDetector {
    pub fn new(width: usize, height: usize, dim: usize, params: DetectorParams) -> Result<Self> {
        Ok(ForegroundDetector {
            gmm: PixelMixtureModel::new(width, height, dim, params.gmm)?,
            gfm: GlobalForegroundModel::new(dim, params.gfm)?,
            frames: 0,
            counters: WorkCounters::default(),
            samples: Vec::new(),
        })
    }

    pub fn from_models(gmm: PixelMixtureModel, gfm: GlobalForegroundModel, frames: u64) -> Result<Self> {
        check_pair(&gmm, &gfm)?;
        Ok(ForegroundDetector {
            gmm,
            gfm,
            frames,
            counters: WorkCounters::default(),
            samples: Vec::new(),
        })
    }

    pub fn background(&self) -> &PixelMixtureModel {
        &self.gmm
    }

    pub fn foreground(&self) -> &GlobalForegroundModel {
        &self.gfm
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames
    }

    pub fn counters(&self) -> WorkCounters {
        self.counters
    }

    pub fn is_bootstrapping(&self) -> bool {
        self.frames < self.gfm.params.bootstrap_frames || self.gfm.is_empty()
    }

    /// Classifies `frame`, then folds it into both models.
    pub fn process(&mut self, frame: &Frame) -> Result<ForegroundMask> {
        self.gmm.check_frame(frame)?;
        let d = self.gmm.dim();
        let mut mask = ForegroundMask::zeros(frame.width(), frame.height(), frame.index);
        dispatch_dim!(d, D => self.process_d::<D>(frame, mask.as_mut_slice()));
        Ok(mask)
    }

    fn process_d<const D: usize>(&mut self, frame: &Frame, out: &mut [u8]) {
        let warm = self.gmm.is_initialized();
        let bootstrap = self.is_bootstrapping();
        let bound = self.gfm.max_log_norm();
        let classify = warm && !self.gfm.is_empty();
        let rate = self.gmm.params.rate_at(self.gmm.frames_seen);
        let thr2 = self.gmm.params.match_threshold * self.gmm.params.match_threshold;
        self.samples.clear();
        let mut touched = 0u64;
        for (i, px) in frame.data().chunks_exact(D).enumerate() {
            touched += 1;
            let x: [f64; D] = std::array::from_fn(|c| px[c] as f64);
            if warm {
                let fg = classify && decide(&self.gmm, &self.gfm, bound, i, &x);
                out[i] = fg as u8;
                let seed = if bootstrap { self.gmm.top(i, &x).0 > thr2 } else { fg };
                if seed {
                    let mut s = [0.0; 3];
                    s[..D].copy_from_slice(&x);
                    self.samples.push(s);
                }
            }
            self.gmm.update_pixel(i, &x, rate);
        }
        self.gmm.frames_seen += 1;
        for s in &self.samples {
            self.gfm.update(&s[..D]);
        }
        self.frames += 1;
        self.counters.frames += 1;
        self.counters.pixels += touched;
        self.counters.scalars += touched * D as u64;
    }
}
