//! Global foreground model: one shared set of Gaussians describing every
//! foreground appearance in the scene.

use serde::{Deserialize, Serialize};

use super::{log_density, log_norm, mahalanobis2, GaussianComponent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GfmParams {
    /// Maximum number of components (L).
    pub capacity: usize,
    /// Per-sample learning rate.
    pub learning_rate: f64,
    /// Samples farther than this many standard deviations from the winning
    /// component start a new one.
    pub creation_threshold: f64,
    pub initial_variance: f64,
    pub variance_floor: f64,
    /// Frames during which high-residual pixels seed the model.
    pub bootstrap_frames: u64,
    /// Keep the foreground density at or above the uniform density over the
    /// 8-bit feature cube, so appearances not yet in the model can still be
    /// classified foreground and then learned.
    pub novelty_floor: bool,
}

impl Default for GfmParams {
    fn default() -> Self {
        GfmParams {
            capacity: 20,
            learning_rate: 1e-3,
            creation_threshold: 3.0,
            initial_variance: 100.0,
            variance_floor: 4.0,
            bootstrap_frames: 30,
            novelty_floor: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Comp {
    pub mean: [f64; 3],
    pub var: [f64; 3],
    pub weight: f64,
    pub lnorm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalForegroundModel {
    pub(crate) params: GfmParams,
    pub(crate) dim: usize,
    pub(crate) comps: Vec<Comp>,
}

impl GlobalForegroundModel {
    pub fn new(dim: usize, params: GfmParams) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("feature dimension must be 1..=3, got {dim}")));
        }
        if params.capacity == 0 {
            return Err(Error::InvalidArgument("foreground model capacity must be positive".into()));
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
        Ok(GlobalForegroundModel {
            params,
            dim,
            comps: Vec::with_capacity(params.capacity),
        })
    }

    /// Builds a model from explicit components; weights are renormalized.
    pub fn from_components(dim: usize, params: GfmParams, comps: &[GaussianComponent]) -> Result<Self> {
        let mut m = GlobalForegroundModel::new(dim, params)?;
        if comps.len() > params.capacity {
            return Err(Error::InvalidArgument(format!(
                "{} components exceed capacity {}",
                comps.len(),
                params.capacity
            )));
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        if comps.is_empty() || !(total > 0.0) {
            return Ok(m);
        }
        for c in comps {
            if c.mean.len() != dim || c.variance.len() != dim {
                return Err(Error::dims(dim, c.mean.len()));
            }
            let mut comp = Comp {
                mean: [0.0; 3],
                var: [1.0; 3],
                weight: c.weight / total,
                lnorm: log_norm(&c.variance),
            };
            comp.mean[..dim].copy_from_slice(&c.mean);
            comp.var[..dim].copy_from_slice(&c.variance);
            m.comps.push(comp);
        }
        Ok(m)
    }

    pub fn params(&self) -> &GfmParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn components(&self) -> Vec<GaussianComponent> {
        self.comps
            .iter()
            .map(|c| GaussianComponent {
                mean: c.mean[..self.dim].to_vec(),
                variance: c.var[..self.dim].to_vec(),
                weight: c.weight,
            })
            .collect()
    }

    /// Log of the uniform floor density, or minus infinity without the floor.
    pub fn log_floor(&self) -> f64 {
        if self.params.novelty_floor {
            -(self.dim as f64) * 256f64.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Bounds the log foreground density of any feature: the largest log
    /// normalizer over all components, or the floor if that is higher.
    pub(crate) fn max_log_norm(&self) -> f64 {
        self.comps.iter().map(|c| c.lnorm).fold(self.log_floor(), f64::max)
    }

    /// Index of the component maximizing density times weight; first index wins ties.
    #[inline]
    pub(crate) fn best(&self, x: &[f64]) -> Option<(usize, f64)> {
        let d = self.dim;
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, c) in self.comps.iter().enumerate() {
            let lp = log_density(x, &c.mean[..d], &c.var[..d], c.lnorm);
            // weights are at most one, so the score never exceeds `lp`
            if best.is_some_and(|(_, s, _)| lp <= s) {
                continue;
            }
            let score = lp + c.weight.ln();
            if best.map_or(true, |(_, s, _)| score > s) {
                best = Some((i, score, lp));
            }
        }
        best.map(|(i, _, lp)| (i, lp))
    }

    /// Foreground density: the unweighted density of the winning component,
    /// raised to the floor when enabled. Zero for an empty model.
    pub fn foreground_density(&self, x: &[f64]) -> f64 {
        self.best(x).map_or(0.0, |(_, lp)| lp.max(self.log_floor()).exp())
    }

    /// Incorporates one foreground sample.
    pub fn update(&mut self, x: &[f64]) {
        let d = self.dim;
        let a = self.params.learning_rate;
        let mut fresh = Comp {
            mean: [0.0; 3],
            var: [self.params.initial_variance; 3],
            weight: 1.0,
            lnorm: 0.0,
        };
        fresh.mean[..d].copy_from_slice(&x[..d]);
        fresh.lnorm = log_norm(&fresh.var[..d]);
        let Some((b, _)) = self.best(x) else {
            self.comps.push(fresh);
            return;
        };
        let thr2 = self.params.creation_threshold * self.params.creation_threshold;
        let accepted = mahalanobis2(x, &self.comps[b].mean[..d], &self.comps[b].var[..d]) <= thr2;
        for c in &mut self.comps {
            c.weight *= 1.0 - a;
        }
        if accepted {
            let floor = self.params.variance_floor;
            let c = &mut self.comps[b];
            c.weight += a;
            let rho = (a / c.weight).min(1.0);
            for k in 0..d {
                let diff = x[k] - c.mean[k];
                c.mean[k] += rho * diff;
                c.var[k] = (c.var[k] + rho * (diff * diff - c.var[k])).max(floor);
            }
            c.lnorm = log_norm(&c.var[..d]);
        } else {
            fresh.weight = a;
            if self.comps.len() < self.params.capacity {
                self.comps.push(fresh);
            } else {
                let mut low = 0;
                for (i, c) in self.comps.iter().enumerate() {
                    if c.weight < self.comps[low].weight {
                        low = i;
                    }
                }
                self.comps[low] = fresh;
            }
        }
        let total: f64 = self.comps.iter().map(|c| c.weight).sum();
        for c in &mut self.comps {
            c.weight /= total;
        }
    }
}
