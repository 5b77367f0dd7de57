//! Foreground detection: per-pixel background mixtures, the global foreground
//! model, Bayes classification and mask post-processing.

mod classify;
mod gfm;
mod gmm;
mod mask;
mod morphology;
mod state;
mod store;
mod zivkovic;

pub use classify::{classify_pixel, detect_mask_gfm, Class, DetectorParams, ForegroundDetector, Posterior, WorkCounters};
pub use gfm::{GfmParams, GlobalForegroundModel};
pub use gmm::{update_background, GaussianComponent, GmmParams, PixelMixtureModel};
pub use mask::ForegroundMask;
pub use morphology::{dilate, erode, morphology_enhance};
pub use state::{read_state, write_state, ModelState};
pub use zivkovic::{ZivkovicModel, ZivkovicParams};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log of the normalizing constant of a diagonal Gaussian.
#[inline]
pub(crate) fn log_norm(var: &[f64]) -> f64 {
    -0.5 * (var.len() as f64 * LN_2PI + var.iter().product::<f64>().ln())
}

/// Squared Mahalanobis distance under a diagonal covariance.
#[inline]
pub(crate) fn mahalanobis2(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        let d = x[k] - mean[k];
        s += d * d / var[k];
    }
    s
}

#[inline]
pub(crate) fn log_density(x: &[f64], mean: &[f64], var: &[f64], log_norm: f64) -> f64 {
    log_norm - 0.5 * mahalanobis2(x, mean, var)
}
