//! Interleaved per-pixel component storage. Each component is one record
//! `[weight, mean[d], var[d]]` and the K records of a pixel are contiguous,
//! so a pixel's top component sits in a single short run of memory.

use super::GaussianComponent;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MixtureStore {
    pub k: usize,
    pub dim: usize,
    pub count: Vec<u8>,
    pub data: Vec<f64>,
}

impl MixtureStore {
    pub fn new(pixels: usize, k: usize, dim: usize) -> Self {
        MixtureStore {
            k,
            dim,
            count: vec![0; pixels],
            data: vec![0.0; pixels * k * (1 + 2 * dim)],
        }
    }

    #[inline]
    pub fn stride(&self) -> usize {
        1 + 2 * self.dim
    }

    #[inline]
    pub fn block(&self, i: usize) -> &[f64] {
        let len = self.k * self.stride();
        &self.data[i * len..(i + 1) * len]
    }

    /// Component count and records of pixel `i`.
    #[inline]
    pub fn block_mut(&mut self, i: usize) -> (&mut u8, &mut [f64]) {
        let len = self.k * self.stride();
        (&mut self.count[i], &mut self.data[i * len..(i + 1) * len])
    }

    pub fn components(&self, i: usize) -> Vec<GaussianComponent> {
        let (d, st) = (self.dim, self.stride());
        let block = self.block(i);
        (0..self.count[i] as usize)
            .map(|s| {
                let r = &block[s * st..(s + 1) * st];
                GaussianComponent {
                    weight: r[0],
                    mean: r[1..1 + d].to_vec(),
                    variance: r[1 + d..1 + 2 * d].to_vec(),
                }
            })
            .collect()
    }

    /// Overwrites slot `s` of pixel `i`; the caller keeps `count` consistent.
    pub fn set(&mut self, i: usize, s: usize, c: &GaussianComponent) {
        let (d, st) = (self.dim, self.stride());
        let r = &mut self.data[(i * self.k + s) * st..(i * self.k + s + 1) * st];
        r[0] = c.weight;
        r[1..1 + d].copy_from_slice(&c.mean);
        r[1 + d..1 + 2 * d].copy_from_slice(&c.variance);
    }
}

/// Squared Mahalanobis distance of `x` to the record starting at `rec`.
#[inline(always)]
pub(crate) fn record_m2<const D: usize>(rec: &[f64], x: &[f64; D]) -> f64 {
    let mut m2 = 0.0;
    for c in 0..D {
        let diff = x[c] - rec[1 + c];
        m2 += diff * diff / rec[1 + D + c];
    }
    m2
}

/// Blends `x` into the record with factor `rho`, flooring the variances.
#[inline(always)]
pub(crate) fn record_blend<const D: usize>(rec: &mut [f64], x: &[f64; D], rho: f64, floor: f64) {
    for c in 0..D {
        let diff = x[c] - rec[1 + c];
        rec[1 + c] += rho * diff;
        let v = &mut rec[1 + D + c];
        *v = (*v + rho * (diff * diff - *v)).max(floor);
    }
}

/// Writes a fresh component at `x` with the given weight and variance.
#[inline(always)]
pub(crate) fn record_init<const D: usize>(rec: &mut [f64], x: &[f64; D], weight: f64, var: f64) {
    rec[0] = weight;
    rec[1..1 + D].copy_from_slice(x);
    rec[1 + D..1 + 2 * D].fill(var);
}

/// Stable insertion sort of the first `n` records by weight, descending.
#[inline(always)]
pub(crate) fn sort_records<const D: usize>(block: &mut [f64], n: usize) {
    let st = 1 + 2 * D;
    for a in 1..n {
        let mut b = a;
        while b > 0 && block[b * st] > block[(b - 1) * st] {
            for c in 0..st {
                block.swap(b * st + c, (b - 1) * st + c);
            }
            b -= 1;
        }
    }
}

/// Calls `$body` with `$d` bound as a const generic dimension (1, 2 or 3).
macro_rules! dispatch_dim {
    ($dim:expr, $d:ident => $body:expr) => {
        match $dim {
            1 => {
                const $d: usize = 1;
                $body
            }
            2 => {
                const $d: usize = 2;
                $body
            }
            _ => {
                const $d: usize = 3;
                $body
            }
        }
    };
}
pub(crate) use dispatch_dim;
