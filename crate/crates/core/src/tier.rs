//! Processing configurations, the tier decision rule and the edge / cloud /
//! hybrid execution strategies.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{frame_bytes, measure_condition, transmit, ChannelParams, LinkTrace};
use crate::congestion::{calibrate_area_threshold, time_threshold_frames, CongestionState};
use crate::error::{Error, Result};
use crate::frame::{resize, to_intensity, Frame};
use crate::geometry::{warp_topdown, Calibration, Homography, Roi, RoiMask};
use crate::pixel::{morphology_enhance, DetectorParams, ForegroundDetector, WorkCounters, ZivkovicModel, ZivkovicParams};
use crate::scene::{SceneScript, CONGESTION_MIN_SECONDS};
use crate::source::FrameSource;
use crate::speed::{SpeedDetector, SpeedParams, SpeedReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Edge,
    Cloud,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Edge => "edge",
            Tier::Cloud => "cloud",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Edge,
    Cloud,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Edge, Strategy::Cloud, Strategy::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Edge => "edge",
            Strategy::Cloud => "cloud",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "edge" => Ok(Strategy::Edge),
            "cloud" => Ok(Strategy::Cloud),
            "hybrid" => Ok(Strategy::Hybrid),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// Resolution, feature dimension and post-processing of one tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub morphology: bool,
}

impl PipelineConfig {
    /// Cloud profile: 640×360 RGB with morphological clean-up.
    pub const CONFIGURATION_1: PipelineConfig = PipelineConfig {
        width: 640,
        height: 360,
        dim: 3,
        morphology: true,
    };

    /// Edge profile: 320×180 intensity, no post-processing.
    pub const CONFIGURATION_2: PipelineConfig = PipelineConfig {
        width: 320,
        height: 180,
        dim: 1,
        morphology: false,
    };

    pub fn for_tier(tier: Tier) -> PipelineConfig {
        match tier {
            Tier::Cloud => PipelineConfig::CONFIGURATION_1,
            Tier::Edge => PipelineConfig::CONFIGURATION_2,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn scalars(&self) -> usize {
        self.pixels() * self.dim
    }
}

/// Scene-level geometry shared by both tiers, in source pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub source_width: usize,
    pub source_height: usize,
    /// Meters per warped pixel at source resolution.
    pub meters_per_pixel: f64,
    /// Source pixels to warped pixels, at source resolution.
    pub homography: Homography,
    pub roi: Roi,
    pub speed_lines_m: [f64; 2],
    /// Expected vehicle footprint (width, length), meters.
    pub vehicle_size_m: [f64; 2],
}

impl SceneGeometry {
    /// Geometry of a rendered script: the renderer already draws a top-down
    /// view, so the warp is the identity.
    pub fn from_script(script: &SceneScript, width: usize, height: usize) -> Result<Self> {
        let size = script.vehicles.first().map_or([2.0, 4.5], |v| v.size);
        Ok(SceneGeometry {
            source_width: width,
            source_height: height,
            meters_per_pixel: script.meters_per_pixel,
            homography: Homography::identity(),
            roi: script.roi()?,
            speed_lines_m: script.speed_lines_m,
            vehicle_size_m: size,
        })
    }
}

/// Tunables common to both tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub detector: DetectorParams,
    pub zivkovic: ZivkovicParams,
    pub speed: SpeedParams,
    /// Area threshold in vehicle footprints.
    pub area_threshold_vehicles: f64,
    /// Dwell threshold, seconds of sustained stopped area. `None` uses the
    /// congestion definition minus the adaptive model's absorption time, so a
    /// stop is flagged once it has lasted the full definition time.
    pub dwell_seconds: Option<f64>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            detector: DetectorParams::default(),
            zivkovic: ZivkovicParams::default(),
            speed: SpeedParams::default(),
            area_threshold_vehicles: 3.0,
            dwell_seconds: None,
        }
    }
}

impl PipelineParams {
    pub fn dwell_seconds(&self) -> f64 {
        self.dwell_seconds
            .unwrap_or((CONGESTION_MIN_SECONDS - self.zivkovic.absorption_seconds).max(0.0))
    }
}

/// Per processed frame outcome of one tier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub frame: u64,
    pub area: usize,
    pub t_c: u64,
    pub congested: bool,
}

/// One tier's full pipeline: preprocessing, both foreground models,
/// congestion counter and speed tracker, with state persisting across frames.
pub struct TierPipeline {
    config: PipelineConfig,
    homography: Homography,
    detector: ForegroundDetector,
    zivkovic: ZivkovicModel,
    speed: SpeedDetector,
    congestion: CongestionState,
    roi: RoiMask,
}

impl TierPipeline {
    pub fn new(config: PipelineConfig, geometry: &SceneGeometry, params: &PipelineParams, fps: f64) -> Result<Self> {
        let sx = config.width as f64 / geometry.source_width as f64;
        let sy = config.height as f64 / geometry.source_height as f64;
        if (sx - sy).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "configuration {}x{} does not preserve the source aspect ratio",
                config.width, config.height
            )));
        }
        let scale = Homography::scale(sx, sy)?;
        let homography = scale.compose(&geometry.homography).compose(&scale.inverse()?);
        let mpp = geometry.meters_per_pixel / sx;
        let calib = Calibration::from_world_lines(mpp, geometry.speed_lines_m, fps)?;
        let roi = geometry.roi.scaled(sx).rasterize(config.width, config.height);
        let tau_a = calibrate_area_threshold(geometry.vehicle_size_m, mpp, params.area_threshold_vehicles);
        let tau_t = time_threshold_frames(params.dwell_seconds(), fps);
        Ok(TierPipeline {
            config,
            homography,
            detector: ForegroundDetector::new(config.width, config.height, config.dim, params.detector)?,
            zivkovic: ZivkovicModel::new(config.width, config.height, config.dim, fps, params.zivkovic)?,
            speed: SpeedDetector::new(params.speed, calib),
            congestion: CongestionState::new(tau_a, tau_t)?,
            roi,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn counters(&self) -> WorkCounters {
        self.detector.counters()
    }

    pub fn congestion(&self) -> &CongestionState {
        &self.congestion
    }

    pub fn detector(&self) -> &ForegroundDetector {
        &self.detector
    }

    pub fn zivkovic(&self) -> &ZivkovicModel {
        &self.zivkovic
    }

    pub fn speed_reports(&self) -> &[SpeedReport] {
        self.speed.reports()
    }

    /// Resize, optional intensity conversion, then top-down warp.
    pub fn prepare(&self, frame: &Frame) -> Result<Frame> {
        let mut f = if frame.width() == self.config.width && frame.height() == self.config.height {
            frame.clone()
        } else {
            resize(frame, self.config.width, self.config.height)?
        };
        if self.config.dim == 1 && f.channels() == 3 {
            f = to_intensity(&f);
        }
        if f.channels() != self.config.dim {
            return Err(Error::dims(format!("d = {}", self.config.dim), format!("d = {}", f.channels())));
        }
        warp_topdown(&f, &self.homography, self.config.width, self.config.height)
    }

    /// Foreground masks (global-model, adaptive) for a prepared frame.
    pub fn masks(&mut self, prepared: &Frame) -> Result<(crate::pixel::ForegroundMask, crate::pixel::ForegroundMask)> {
        let mut g = self.detector.process(prepared)?;
        let mut z = self.zivkovic.apply(prepared)?;
        if self.config.morphology {
            g = morphology_enhance(&g);
            z = morphology_enhance(&z);
        }
        Ok((g, z))
    }

    /// Processes one source frame through every stage.
    pub fn process(&mut self, frame: &Frame) -> Result<FrameOutcome> {
        let prepared = self.prepare(frame)?;
        let (g, z) = self.masks(&prepared)?;
        let area = crate::congestion::stopped_area(&g, &z, &self.roi)?;
        let verdict = self.congestion.step(frame.index, area);
        self.speed.push(&g)?;
        Ok(FrameOutcome {
            frame: frame.index,
            area,
            t_c: verdict.t_c,
            congested: verdict.congested,
        })
    }

    pub fn finish(self) -> Vec<SpeedReport> {
        self.speed.finish()
    }
}

/// When the link is worse than the threshold, process at the edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridPolicy {
    /// Normalized link condition below which the edge tier is used. The
    /// default sits between the lowest swept rate where the cloud tier still
    /// matched the edge (1.0) and the next one (0.95).
    pub threshold: f64,
    /// Seconds between condition measurements.
    pub poll_period: f64,
}

impl Default for HybridPolicy {
    fn default() -> Self {
        HybridPolicy {
            threshold: 0.975,
            poll_period: 1.0,
        }
    }
}

/// True (process at the edge) iff `c < threshold`.
pub fn select_tier(c: f64, threshold: f64) -> bool {
    c < threshold
}

/// Accuracy of the selected tier: `a_edge` when the edge is selected, else `a_cloud`.
pub fn objective_value(beta_e: bool, a_edge: f64, a_cloud: f64) -> f64 {
    if beta_e {
        a_edge
    } else {
        a_cloud
    }
}

/// Whether selecting the edge maximizes the objective; cloud on ties.
pub fn best_tier(a_edge: f64, a_cloud: f64) -> bool {
    objective_value(true, a_edge, a_cloud) > objective_value(false, a_edge, a_cloud)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub t: f64,
    pub c: f64,
    pub beta_e: bool,
}

/// Polls the trace every period over `[0, duration)`.
pub fn switch_log(trace: &LinkTrace, policy: &HybridPolicy, reference_rate: f64, duration: f64) -> Vec<SwitchRecord> {
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * policy.poll_period;
        if t >= duration {
            break;
        }
        let c = measure_condition(trace, t, policy.poll_period, reference_rate);
        out.push(SwitchRecord {
            t,
            c,
            beta_e: select_tier(c, policy.threshold),
        });
        k += 1;
    }
    out
}

/// CSV rows: `t,c,beta_e`.
pub fn write_switch_log<W: Write>(out: W, log: &[SwitchRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "t,c,beta_e")?;
    for r in log {
        writeln!(w, "{:.3},{:.6},{}", r.t, r.c, r.beta_e as u8)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedReport {
    pub report: SpeedReport,
    pub tier: Tier,
}

/// Per-source-frame detection output of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSeries {
    pub strategy: Strategy,
    pub congested: Vec<bool>,
    pub area: Vec<usize>,
    /// Tier whose output is used at each frame.
    pub tier: Vec<Tier>,
    pub reports: Vec<TaggedReport>,
}

impl DetectionSeries {
    pub fn speed_reports(&self) -> Vec<SpeedReport> {
        self.reports.iter().map(|r| r.report.clone()).collect()
    }
}

/// Link and policy settings for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSetup {
    pub trace: LinkTrace,
    pub channel: ChannelParams,
    /// Bytes/s corresponding to `c = 1`; defaults to the cloud tier's raw throughput.
    pub reference_rate: Option<f64>,
    pub c_t: f64,
    pub policy: HybridPolicy,
}

impl LinkSetup {
    pub fn new(trace: LinkTrace) -> Self {
        LinkSetup {
            trace,
            channel: ChannelParams::default(),
            reference_rate: None,
            c_t: 1.0,
            policy: HybridPolicy::default(),
        }
    }

    pub fn reference_rate(&self, fps: f64) -> f64 {
        self.reference_rate.unwrap_or_else(|| required_rate(fps))
    }
}

/// Raw throughput needed to ship every cloud-configuration frame.
pub fn required_rate(fps: f64) -> f64 {
    let c = PipelineConfig::CONFIGURATION_1;
    frame_bytes(c.width, c.height, 3) * fps
}

/// Everything one pass over a stream produces.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub series: Vec<DetectionSeries>,
    pub switch_log: Vec<SwitchRecord>,
    pub delivered: Vec<bool>,
    pub edge_counters: Option<WorkCounters>,
    pub cloud_counters: Option<WorkCounters>,
}

impl StrategyRun {
    pub fn get(&self, strategy: Strategy) -> Option<&DetectionSeries> {
        self.series.iter().find(|s| s.strategy == strategy)
    }
}

struct TierTrack {
    congested: Vec<bool>,
    area: Vec<usize>,
    reports: Vec<SpeedReport>,
    counters: WorkCounters,
}

/// Runs the requested strategies in a single pass over `source`.
///
/// The edge tier sees every frame; the cloud tier sees only frames the link
/// delivers and, between deliveries, holds its last verdict. Hybrid stitches
/// the two per poll interval; a speed report comes from the cloud tier when
/// the cloud was active over its whole span and from the edge otherwise.
/// Both tiers keep their own models warm throughout, whichever is active.
pub fn run_strategies<S: FrameSource + ?Sized>(
    source: &S,
    geometry: &SceneGeometry,
    params: &PipelineParams,
    link: &LinkSetup,
    strategies: &[Strategy],
) -> Result<StrategyRun> {
    let spec = *source.spec();
    let n = source.len();
    let fps = spec.fps;
    let duration = n as f64 / fps;
    if link.trace.duration() + 1e-9 < duration {
        return Err(Error::StreamDesync(format!(
            "trace covers {:.3} s but the stream lasts {:.3} s",
            link.trace.duration(),
            duration
        )));
    }
    let want = |s: Strategy| strategies.contains(&s);
    let need_edge = want(Strategy::Edge) || want(Strategy::Hybrid);
    let need_cloud = want(Strategy::Cloud) || want(Strategy::Hybrid);
    let reference = link.reference_rate(fps);

    let delivered = if need_cloud {
        let size = frame_bytes(spec.width, spec.height, 3);
        transmit(n, fps, size, &link.trace, link.channel, reference, link.c_t)?.delivered
    } else {
        vec![true; n]
    };
    let log = switch_log(&link.trace, &link.policy, reference, duration);

    let mut edge = if need_edge {
        Some(TierPipeline::new(PipelineConfig::CONFIGURATION_2, geometry, params, fps)?)
    } else {
        None
    };
    let mut cloud = if need_cloud {
        Some(TierPipeline::new(PipelineConfig::CONFIGURATION_1, geometry, params, fps)?)
    } else {
        None
    };
    let mut edge_out = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut cloud_out = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut cloud_last = (false, 0usize);
    for i in 0..n {
        let frame = source.frame(i);
        if let Some(p) = edge.as_mut() {
            let o = p.process(&frame)?;
            edge_out.0.push(o.congested);
            edge_out.1.push(o.area);
        }
        if let Some(p) = cloud.as_mut() {
            if delivered[i] {
                let o = p.process(&frame)?;
                cloud_last = (o.congested, o.area);
            }
            cloud_out.0.push(cloud_last.0);
            cloud_out.1.push(cloud_last.1);
        }
    }
    let finish = |p: Option<TierPipeline>, out: (Vec<bool>, Vec<usize>)| {
        p.map(|p| {
            let counters = p.counters();
            TierTrack {
                congested: out.0,
                area: out.1,
                reports: p.finish(),
                counters,
            }
        })
    };
    let edge = finish(edge, edge_out);
    let cloud = finish(cloud, cloud_out);

    let single = |strategy: Strategy, tier: Tier, track: &TierTrack| DetectionSeries {
        strategy,
        congested: track.congested.clone(),
        area: track.area.clone(),
        tier: vec![tier; n],
        reports: track
            .reports
            .iter()
            .map(|r| TaggedReport {
                report: r.clone(),
                tier,
            })
            .collect(),
    };
    let mut series = Vec::new();
    for &s in strategies {
        match s {
            Strategy::Edge => series.push(single(s, Tier::Edge, edge.as_ref().unwrap())),
            Strategy::Cloud => series.push(single(s, Tier::Cloud, cloud.as_ref().unwrap())),
            Strategy::Hybrid => {
                let (e, c) = (edge.as_ref().unwrap(), cloud.as_ref().unwrap());
                let tier: Vec<Tier> = (0..n)
                    .map(|i| {
                        let k = ((i as f64 / fps) / link.policy.poll_period).floor() as usize;
                        match log.get(k.min(log.len().saturating_sub(1))) {
                            Some(r) if r.beta_e => Tier::Edge,
                            _ => Tier::Cloud,
                        }
                    })
                    .collect();
                let pick = |i: usize| if tier[i] == Tier::Edge { e } else { c };
                // a measurement spans frames; cloud owns it only if active over the whole span
                let cloud_span = |r: &SpeedReport| {
                    let last = (r.last_frame as usize).min(n.saturating_sub(1));
                    let first = (r.first_frame as usize).min(last);
                    tier[first..=last].iter().all(|&t| t == Tier::Cloud)
                };
                let mut reports: Vec<TaggedReport> = Vec::new();
                for (t, track) in [(Tier::Edge, e), (Tier::Cloud, c)] {
                    for r in &track.reports {
                        if cloud_span(r) == (t == Tier::Cloud) {
                            reports.push(TaggedReport {
                                report: r.clone(),
                                tier: t,
                            });
                        }
                    }
                }
                reports.sort_by_key(|r| (r.report.last_frame, r.report.first_frame, r.tier.name()));
                series.push(DetectionSeries {
                    strategy: s,
                    congested: (0..n).map(|i| pick(i).congested[i]).collect(),
                    area: (0..n).map(|i| pick(i).area[i]).collect(),
                    tier,
                    reports,
                });
            }
        }
    }
    Ok(StrategyRun {
        series,
        switch_log: log,
        delivered,
        edge_counters: edge.as_ref().map(|t| t.counters),
        cloud_counters: cloud.as_ref().map(|t| t.counters),
    })
}

pub fn run_edge<S: FrameSource + ?Sized>(
    source: &S,
    geometry: &SceneGeometry,
    params: &PipelineParams,
) -> Result<DetectionSeries> {
    let duration = source.len() as f64 / source.spec().fps;
    let link = LinkSetup::new(LinkTrace::constant(f64::INFINITY, duration.max(1e-3))?);
    let run = run_strategies(source, geometry, params, &link, &[Strategy::Edge])?;
    Ok(run.series.into_iter().next().unwrap())
}

pub fn run_cloud<S: FrameSource + ?Sized>(
    source: &S,
    geometry: &SceneGeometry,
    params: &PipelineParams,
    link: &LinkSetup,
) -> Result<DetectionSeries> {
    let run = run_strategies(source, geometry, params, link, &[Strategy::Cloud])?;
    Ok(run.series.into_iter().next().unwrap())
}

pub fn run_hybrid<S: FrameSource + ?Sized>(
    source: &S,
    geometry: &SceneGeometry,
    params: &PipelineParams,
    link: &LinkSetup,
) -> Result<(DetectionSeries, Vec<SwitchRecord>)> {
    let run = run_strategies(source, geometry, params, link, &[Strategy::Hybrid])?;
    Ok((run.series.into_iter().next().unwrap(), run.switch_log))
}
