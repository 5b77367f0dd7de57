//! Versioned binary checkpoint of the pixel models.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    "TMST"
//! version  u32 = 2
//! detector frames u64
//! gmm      components u32, learning_rate f64, match_threshold f64,
//!          variance_floor f64, initial_variance f64, warmup_frames u64,
//!          width u32, height u32, dim u32, frames_seen u64,
//!          count  [u8;  W*H]
//!          comps  [f64; W*H*K*(1+2d)], one record per slot: weight, mean[d], var[d]
//! gfm      capacity u32, learning_rate f64, creation_threshold f64,
//!          initial_variance f64, variance_floor f64, bootstrap_frames u64,
//!          novelty_floor u8,
//!          dim u32, len u32, then per component: mean [f64; d], var [f64; d], weight f64
//! zivkovic max_components u32, absorption_seconds f64, foreground_fraction f64,
//!          complexity_prior f64, match_threshold f64, initial_variance f64,
//!          variance_floor f64, warmup_frames u64, learning_rate f64,
//!          width u32, height u32, dim u32, frames_seen u64,
//!          count, comps as for gmm
//! ```
//!
//! Cached foreground log normalizers are recomputed on load.

use std::io::{Read, Write};

use super::gfm::Comp;
use super::{log_norm, ForegroundDetector, GfmParams, GlobalForegroundModel, GmmParams, PixelMixtureModel};
use super::{ZivkovicModel, ZivkovicParams};
use crate::error::{Error, Result};

pub const STATE_MAGIC: &[u8; 4] = b"TMST";
pub const STATE_VERSION: u32 = 2;

#[derive(Debug, Clone)]
pub struct ModelState {
    pub detector: ForegroundDetector,
    pub zivkovic: ZivkovicModel,
}

struct Out<W> {
    inner: W,
}

impl<W: Write> Out<W> {
    fn u8s(&mut self, v: &[u8]) -> Result<()> {
        self.inner.write_all(v)?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.u8s(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.u8s(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.u8s(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 8);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.u8s(&buf)
    }
}

struct In<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> In<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::ModelState(format!("truncated at byte {}", self.offset))
            } else {
                e.into()
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
    fn u8s(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut v = vec![0u8; n];
        self.fill(&mut v)?;
        Ok(v)
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.u8s(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn write_state<W: Write>(out: W, state: &ModelState) -> Result<()> {
    let mut o = Out { inner: out };
    o.u8s(STATE_MAGIC)?;
    o.u32(STATE_VERSION)?;
    let det = &state.detector;
    o.u64(det.frames)?;

    let g = &det.gmm;
    let p = g.params;
    o.u32(p.components as u32)?;
    o.f64(p.learning_rate)?;
    o.f64(p.match_threshold)?;
    o.f64(p.variance_floor)?;
    o.f64(p.initial_variance)?;
    o.u64(p.warmup_frames)?;
    o.u32(g.width as u32)?;
    o.u32(g.height as u32)?;
    o.u32(g.dim() as u32)?;
    o.u64(g.frames_seen)?;
    o.u8s(&g.store.count)?;
    o.f64s(&g.store.data)?;

    let f = &det.gfm;
    let p = f.params;
    o.u32(p.capacity as u32)?;
    o.f64(p.learning_rate)?;
    o.f64(p.creation_threshold)?;
    o.f64(p.initial_variance)?;
    o.f64(p.variance_floor)?;
    o.u64(p.bootstrap_frames)?;
    o.u8s(&[p.novelty_floor as u8])?;
    o.u32(f.dim as u32)?;
    o.u32(f.comps.len() as u32)?;
    for c in &f.comps {
        o.f64s(&c.mean[..f.dim])?;
        o.f64s(&c.var[..f.dim])?;
        o.f64(c.weight)?;
    }

    let z = &state.zivkovic;
    let p = z.params;
    o.u32(p.max_components as u32)?;
    o.f64(p.absorption_seconds)?;
    o.f64(p.foreground_fraction)?;
    o.f64(p.complexity_prior)?;
    o.f64(p.match_threshold)?;
    o.f64(p.initial_variance)?;
    o.f64(p.variance_floor)?;
    o.u64(p.warmup_frames)?;
    o.f64(z.rate)?;
    o.u32(z.width as u32)?;
    o.u32(z.height as u32)?;
    o.u32(z.dim() as u32)?;
    o.u64(z.frames_seen)?;
    o.u8s(&z.store.count)?;
    o.f64s(&z.store.data)?;
    o.inner.flush()?;
    Ok(())
}

fn check_dim(dim: usize) -> Result<usize> {
    if (1..=3).contains(&dim) {
        Ok(dim)
    } else {
        Err(Error::ModelState(format!("feature dimension {dim} out of range")))
    }
}

pub fn read_state<R: Read>(input: R) -> Result<ModelState> {
    let mut r = In { inner: input, offset: 0 };
    let magic = r.u8s(4)?;
    if magic != STATE_MAGIC {
        return Err(Error::ModelState("bad magic".into()));
    }
    let version = r.u32()?;
    if version != STATE_VERSION {
        return Err(Error::ModelState(format!("unsupported version {version}")));
    }
    let frames = r.u64()?;

    let params = GmmParams {
        components: r.u32()? as usize,
        learning_rate: r.f64()?,
        match_threshold: r.f64()?,
        variance_floor: r.f64()?,
        initial_variance: r.f64()?,
        warmup_frames: r.u64()?,
    };
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let dim = check_dim(r.u32()? as usize)?;
    let mut gmm = PixelMixtureModel::new(w, h, dim, params)?;
    gmm.frames_seen = r.u64()?;
    let n = w * h;
    let k = params.components;
    gmm.store.count = r.u8s(n)?;
    gmm.store.data = r.f64s(n * k * (1 + 2 * dim))?;
    if gmm.store.count.iter().any(|&c| c as usize > k) {
        return Err(Error::ModelState("component count exceeds K".into()));
    }

    let params = GfmParams {
        capacity: r.u32()? as usize,
        learning_rate: r.f64()?,
        creation_threshold: r.f64()?,
        initial_variance: r.f64()?,
        variance_floor: r.f64()?,
        bootstrap_frames: r.u64()?,
        novelty_floor: match r.u8s(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::ModelState(format!("invalid floor flag {b}"))),
        },
    };
    let fdim = check_dim(r.u32()? as usize)?;
    let mut gfm = GlobalForegroundModel::new(fdim, params)?;
    let len = r.u32()? as usize;
    if len > params.capacity {
        return Err(Error::ModelState("foreground component count exceeds capacity".into()));
    }
    for _ in 0..len {
        let mut c = Comp {
            mean: [0.0; 3],
            var: [1.0; 3],
            weight: 0.0,
            lnorm: 0.0,
        };
        c.mean[..fdim].copy_from_slice(&r.f64s(fdim)?);
        c.var[..fdim].copy_from_slice(&r.f64s(fdim)?);
        c.weight = r.f64()?;
        c.lnorm = log_norm(&c.var[..fdim]);
        gfm.comps.push(c);
    }

    let params = ZivkovicParams {
        max_components: r.u32()? as usize,
        absorption_seconds: r.f64()?,
        foreground_fraction: r.f64()?,
        complexity_prior: r.f64()?,
        match_threshold: r.f64()?,
        initial_variance: r.f64()?,
        variance_floor: r.f64()?,
        warmup_frames: r.u64()?,
    };
    let rate = r.f64()?;
    let (zw, zh) = (r.u32()? as usize, r.u32()? as usize);
    let zdim = check_dim(r.u32()? as usize)?;
    let mut z = ZivkovicModel::new(zw, zh, zdim, 1.0, params)?;
    z.rate = rate;
    z.frames_seen = r.u64()?;
    let n = zw * zh;
    let k = params.max_components;
    z.store.count = r.u8s(n)?;
    z.store.data = r.f64s(n * k * (1 + 2 * zdim))?;
    if z.store.count.iter().any(|&c| c as usize > k) {
        return Err(Error::ModelState("component count exceeds K".into()));
    }

    Ok(ModelState {
        detector: ForegroundDetector::from_models(gmm, gfm, frames)?,
        zivkovic: z,
    })
}
