//! Experiment configuration and orchestration: every weather, network and
//! seed cell is rendered, run through the requested strategies, scored and
//! written out as CSV plus a text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::anova::{one_way_anova, AnovaResult};
use super::metrics::{evaluate_ranges, mask_ranges, match_reports, ErrorReport, EventCounts, MatchGates};
use super::window::{bad_frames, sliding_window_errors, WindowPoint};
use crate::channel::{ChannelParams, LinkTrace};
use crate::error::{Error, Result};
use crate::scenario::{video_spec, DeskScenario};
use crate::scene::{SceneRenderer, SceneScript};
use crate::source::WeatheredSource;
use crate::tier::{required_rate, run_strategies, HybridPolicy, LinkSetup, PipelineParams, SceneGeometry, Strategy, SwitchRecord};
use crate::weather::{WeatherKind, WeatherModel};

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "TIERMON_OUT";

/// Link trace of one network state. Rates are fractions of the rate needed
/// to ship every cloud frame, except for `file` traces (bytes/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceSpec {
    Unlimited,
    Constant {
        fraction: f64,
    },
    /// `limit` inside `window` (seconds; the middle third when absent) and
    /// `base` elsewhere (unlimited when absent).
    Limited {
        limit: f64,
        #[serde(default)]
        base: Option<f64>,
        #[serde(default)]
        window: Option<[f64; 2]>,
    },
    File {
        path: PathBuf,
    },
}

impl TraceSpec {
    pub fn build(&self, required: f64, duration: f64, base_dir: &Path) -> Result<LinkTrace> {
        match self {
            TraceSpec::Unlimited => LinkTrace::constant(f64::INFINITY, duration),
            TraceSpec::Constant { fraction } => LinkTrace::constant(fraction * required, duration),
            TraceSpec::Limited { limit, base, window } => {
                let base = base.map_or(f64::INFINITY, |b| b * required);
                let window = window.map_or((duration / 3.0, 2.0 * duration / 3.0), |w| (w[0], w[1]));
                LinkTrace::limited(base, limit * required, window, duration)
            }
            TraceSpec::File { path } => {
                let path = resolve(base_dir, path);
                if !path.is_file() {
                    return Err(Error::config(&path, "trace file not found"));
                }
                LinkTrace::load_csv(&path, duration)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Level 1 of the network factor in the variance analysis.
    #[serde(default)]
    pub bad: bool,
    pub trace: TraceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Sliding window length as a fraction of the run.
    pub window_fraction: f64,
    /// Target bad-time fractions of the window curves.
    pub grid: Vec<f64>,
    /// Largest accepted distance between a window's bad fraction and its target.
    pub tolerance: f64,
    pub gates: MatchGates,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            window_fraction: 0.2,
            grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            tolerance: 0.05,
            gates: MatchGates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub weathers: Vec<WeatherKind>,
    pub strategies: Vec<Strategy>,
    pub networks: Vec<NetworkSpec>,
    /// Generated traffic; its seed is replaced by each run's seed.
    pub scenario: DeskScenario,
    /// Scene script file used instead of the generated traffic.
    pub script: Option<PathBuf>,
    pub pipeline: PipelineParams,
    pub policy: HybridPolicy,
    pub channel: ChannelParams,
    pub eval: EvalSettings,
    pub out_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1, 2, 3, 4, 5],
            weathers: WeatherKind::ALL.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            networks: vec![
                NetworkSpec {
                    name: "good".into(),
                    bad: false,
                    trace: TraceSpec::Unlimited,
                },
                NetworkSpec {
                    name: "limited".into(),
                    bad: true,
                    trace: TraceSpec::Limited {
                        limit: 0.3,
                        base: None,
                        window: None,
                    },
                },
            ],
            scenario: DeskScenario::default(),
            script: None,
            pipeline: PipelineParams::default(),
            policy: HybridPolicy::default(),
            channel: ChannelParams::default(),
            eval: EvalSettings::default(),
            out_dir: None,
            base_dir: PathBuf::from("."),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::config(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config { path: p, message } if p.as_os_str().is_empty() => Error::config(path, message),
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("", e))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.seeds.is_empty() || self.weathers.is_empty() || self.strategies.is_empty() || self.networks.is_empty() {
            return bad("seeds, weathers, strategies and networks must be non-empty".into());
        }
        if !(self.scenario.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.scenario.duration));
        }
        if !(self.eval.window_fraction > 0.0 && self.eval.window_fraction <= 1.0) {
            return bad(format!("window_fraction must be in (0, 1], got {}", self.eval.window_fraction));
        }
        let mut names: Vec<&str> = self.networks.iter().map(|n| n.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("network names must be unique".into());
        }
        if let Some(p) = &self.script {
            let p = resolve(&self.base_dir, p);
            if !p.is_file() {
                return Err(Error::config(&p, "scene script not found"));
            }
        }
        for n in &self.networks {
            if let TraceSpec::File { path } = &n.trace {
                let p = resolve(&self.base_dir, path);
                if !p.is_file() {
                    return Err(Error::config(&p, "trace file not found"));
                }
            }
        }
        Ok(())
    }

    /// Output directory: `explicit`, else the environment override, else the
    /// configured one, else `results`.
    pub fn output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.out_dir
            .as_ref()
            .map_or_else(|| PathBuf::from("results"), |p| resolve(&self.base_dir, p))
    }

    fn script_for(&self, seed: u64) -> Result<SceneScript> {
        match &self.script {
            Some(p) => load_script(resolve(&self.base_dir, p)),
            None => Ok(DeskScenario {
                seed,
                ..self.scenario.clone()
            }
            .build()),
        }
    }
}

/// Reads a TOML scene script.
pub fn load_script(path: impl AsRef<Path>) -> Result<SceneScript> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::config(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(path, e))
}

/// One (weather, network, seed) cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RunKey {
    pub weather: WeatherKind,
    pub network: String,
    pub seed: u64,
}

/// Series label: a strategy, or the cloud strategy restricted to good (`cloud+`)
/// or bad (`cloud-`) link frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeriesLabel {
    Edge,
    Cloud,
    CloudGood,
    CloudBad,
    Hybrid,
}

impl SeriesLabel {
    pub const TABLE: [SeriesLabel; 5] = [
        SeriesLabel::Edge,
        SeriesLabel::Cloud,
        SeriesLabel::CloudGood,
        SeriesLabel::CloudBad,
        SeriesLabel::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeriesLabel::Edge => "edge",
            SeriesLabel::Cloud => "cloud",
            SeriesLabel::CloudGood => "cloud+",
            SeriesLabel::CloudBad => "cloud-",
            SeriesLabel::Hybrid => "hybrid",
        }
    }

    fn of(s: Strategy) -> Self {
        match s {
            Strategy::Edge => SeriesLabel::Edge,
            Strategy::Cloud => SeriesLabel::Cloud,
            Strategy::Hybrid => SeriesLabel::Hybrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub key: RunKey,
    pub bad_network: bool,
    pub series: SeriesLabel,
    pub frames: usize,
    pub report: ErrorReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub key: RunKey,
    pub strategy: Strategy,
    pub target: f64,
    pub point: Option<WindowPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaRow {
    pub factor: &'static str,
    pub strategy: Strategy,
    pub metric: &'static str,
    pub outcome: std::result::Result<AnovaResult, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub curves: Vec<CurveRow>,
    pub switches: Vec<(RunKey, SwitchRecord)>,
    pub anova: Vec<AnovaRow>,
}

/// Runs one cell and appends its rows.
pub fn run_cell(cfg: &ExperimentConfig, key: &RunKey, out: &mut ExperimentResults) -> Result<()> {
    let network = cfg
        .networks
        .iter()
        .find(|n| n.name == key.network)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown network '{}'", key.network)))?;
    let duration = cfg.scenario.duration;
    let spec = video_spec(duration);
    let script = cfg.script_for(key.seed)?;
    let renderer = SceneRenderer::new(script.clone(), spec)?;
    let truth = renderer.ground_truth().clone();
    let geometry = SceneGeometry::from_script(&script, spec.width, spec.height)?;
    let source = WeatheredSource::new(renderer, WeatherModel::preset(key.weather, key.seed));

    let required = required_rate(spec.fps);
    let mut link = LinkSetup::new(network.trace.build(required, duration, &cfg.base_dir)?);
    link.channel = cfg.channel;
    link.policy = cfg.policy;
    let run = run_strategies(&source, &geometry, &cfg.pipeline, &link, &cfg.strategies)?;

    let n = truth.frame_count;
    let bad = bad_frames(&link.trace, link.reference_rate(spec.fps), spec.fps, n);
    let good_ranges = mask_ranges(&bad.iter().map(|b| !b).collect::<Vec<_>>());
    let bad_ranges = mask_ranges(&bad);
    let window = ((cfg.eval.window_fraction * n as f64).round() as usize).clamp(1, n.max(1));
    let whole = [0..n];

    for series in &run.series {
        let reports = series.speed_reports();
        let matches = match_reports(&reports, &truth, cfg.eval.gates);
        let mut push = |label: SeriesLabel, ranges: &[std::ops::Range<usize>]| -> Result<()> {
            let frames = ranges.iter().map(|r| r.len()).sum();
            if frames > 0 {
                out.rows.push(ResultRow {
                    key: key.clone(),
                    bad_network: network.bad,
                    series: label,
                    frames,
                    report: evaluate_ranges(&series.congested, &reports, &truth, &matches, ranges)?,
                });
            }
            Ok(())
        };
        push(SeriesLabel::of(series.strategy), &whole)?;
        if series.strategy == Strategy::Cloud && !bad_ranges.is_empty() {
            push(SeriesLabel::CloudGood, &good_ranges)?;
            push(SeriesLabel::CloudBad, &bad_ranges)?;
        }
        if !bad_ranges.is_empty() && !good_ranges.is_empty() {
            let curve = sliding_window_errors(
                &series.congested,
                &reports,
                &truth,
                &matches,
                &bad,
                &cfg.eval.grid,
                window,
                cfg.eval.tolerance,
            )?;
            out.curves.extend(curve.points.into_iter().map(|(target, point)| CurveRow {
                key: key.clone(),
                strategy: series.strategy,
                target,
                point,
            }));
        }
    }
    if cfg.strategies.contains(&Strategy::Hybrid) {
        out.switches.extend(run.switch_log.iter().map(|r| (key.clone(), *r)));
    }
    Ok(())
}

/// All cells of `cfg`, in weather, network, seed order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut keys = Vec::new();
    for &weather in &cfg.weathers {
        for n in &cfg.networks {
            for &seed in &cfg.seeds {
                keys.push(RunKey {
                    weather,
                    network: n.name.clone(),
                    seed,
                });
            }
        }
    }
    keys
}

/// Runs every cell, calling `progress` before each, then the variance analyses.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(usize, usize, &RunKey)) -> Result<ExperimentResults> {
    cfg.validate()?;
    let keys = cells(cfg);
    let mut out = ExperimentResults::default();
    for (i, key) in keys.iter().enumerate() {
        progress(i, keys.len(), key);
        run_cell(cfg, key, &mut out)?;
    }
    out.anova = factor_analyses(&out.rows);
    Ok(out)
}

/// Network factor on the cloud strategy and snowy factor on the edge
/// strategy, for speed and congestion errors.
pub fn factor_analyses(rows: &[ResultRow]) -> Vec<AnovaRow> {
    let designs: [(&'static str, Strategy, fn(&ResultRow) -> bool); 2] = [
        ("bad_network", Strategy::Cloud, |r| r.bad_network),
        ("snowy", Strategy::Edge, |r| r.key.weather == WeatherKind::Snowy),
    ];
    let metrics: [(&'static str, fn(&ErrorReport) -> Option<f64>); 2] =
        [("speed", |r| Some(r.speed)), ("congestion", |r| r.congestion)];
    let mut out = Vec::new();
    for (factor, strategy, level) in designs {
        let runs: Vec<&ResultRow> = rows.iter().filter(|r| r.series == SeriesLabel::of(strategy)).collect();
        if runs.is_empty() {
            continue;
        }
        for (metric, value) in metrics {
            let (levels, values): (Vec<u8>, Vec<f64>) =
                runs.iter().filter_map(|r| value(&r.report).map(|v| (level(r) as u8, v))).unzip();
            out.push(AnovaRow {
                factor,
                strategy,
                metric,
                outcome: one_way_anova(&levels, &values).map_err(|e| e.to_string()),
            });
        }
    }
    out
}

/// Pools run reports: congestion over summed events, speed errors over vehicles.
pub fn pool(reports: &[&ErrorReport]) -> ErrorReport {
    let mut events = EventCounts::default();
    let (mut n, mut matched, mut s_sum, mut sq_sum, mut speed_sum) = (0usize, 0usize, 0.0, 0.0, 0.0);
    for r in reports {
        events.truth_events += r.events.truth_events;
        events.detected_events += r.events.detected_events;
        events.missed += r.events.missed;
        events.spurious += r.events.spurious;
        n += r.truth_vehicles;
        matched += r.matched_vehicles;
        s_sum += r.speed * r.truth_vehicles as f64;
        sq_sum += r.rms_mph * r.rms_mph * r.truth_vehicles as f64;
        speed_sum += r.mean_speed_mph.unwrap_or(0.0) * r.matched_vehicles as f64;
    }
    let per = |x: f64| if n > 0 { x / n as f64 } else { 0.0 };
    ErrorReport {
        congestion: events.error(),
        speed: per(s_sum),
        rms_mph: per(sq_sum).sqrt(),
        mean_speed_mph: (matched > 0).then(|| speed_sum / matched as f64),
        events,
        truth_vehicles: n,
        matched_vehicles: matched,
    }
}

#[derive(Serialize)]
struct ResultCsv<'a> {
    weather: &'a str,
    network: &'a str,
    bad_network: u8,
    seed: u64,
    series: &'a str,
    frames: usize,
    congestion_error: Option<f64>,
    speed_error: f64,
    rms_mph: f64,
    mean_speed_mph: Option<f64>,
    truth_events: usize,
    detected_events: usize,
    missed_events: usize,
    spurious_events: usize,
    truth_vehicles: usize,
    matched_vehicles: usize,
}

#[derive(Serialize)]
struct CurveCsv<'a> {
    weather: &'a str,
    network: &'a str,
    seed: u64,
    strategy: &'a str,
    target: f64,
    omitted: u8,
    start_frame: Option<usize>,
    end_frame: Option<usize>,
    bad_fraction: Option<f64>,
    congestion_error: Option<f64>,
    speed_error: Option<f64>,
    rms_mph: Option<f64>,
    truth_events: Option<usize>,
    truth_vehicles: Option<usize>,
}

#[derive(Serialize)]
struct SwitchCsv<'a> {
    weather: &'a str,
    network: &'a str,
    seed: u64,
    t: f64,
    c: f64,
    beta_e: u8,
}

#[derive(Serialize)]
struct AnovaCsv<'a> {
    factor: &'a str,
    strategy: &'a str,
    metric: &'a str,
    coefficient: Option<f64>,
    f: Option<f64>,
    p_value: Option<f64>,
    mean_level0: Option<f64>,
    mean_level1: Option<f64>,
    n_level0: Option<usize>,
    n_level1: Option<usize>,
    note: &'a str,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::config(path, e)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `curves.csv`, `switches.csv`, `anova.csv` and `summary.txt`.
pub fn write_reports(results: &ExperimentResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config(dir, e))?;
    write_csv(
        &dir.join("results.csv"),
        results.rows.iter().map(|r| ResultCsv {
            weather: r.key.weather.name(),
            network: &r.key.network,
            bad_network: r.bad_network as u8,
            seed: r.key.seed,
            series: r.series.name(),
            frames: r.frames,
            congestion_error: r.report.congestion,
            speed_error: r.report.speed,
            rms_mph: r.report.rms_mph,
            mean_speed_mph: r.report.mean_speed_mph,
            truth_events: r.report.events.truth_events,
            detected_events: r.report.events.detected_events,
            missed_events: r.report.events.missed,
            spurious_events: r.report.events.spurious,
            truth_vehicles: r.report.truth_vehicles,
            matched_vehicles: r.report.matched_vehicles,
        }),
    )?;
    write_csv(
        &dir.join("curves.csv"),
        results.curves.iter().map(|c| {
            let p = c.point.as_ref();
            CurveCsv {
                weather: c.key.weather.name(),
                network: &c.key.network,
                seed: c.key.seed,
                strategy: c.strategy.name(),
                target: c.target,
                omitted: p.is_none() as u8,
                start_frame: p.map(|p| p.start_frame),
                end_frame: p.map(|p| p.end_frame),
                bad_fraction: p.map(|p| p.bad_fraction),
                congestion_error: p.and_then(|p| p.report.congestion),
                speed_error: p.map(|p| p.report.speed),
                rms_mph: p.map(|p| p.report.rms_mph),
                truth_events: p.map(|p| p.report.events.truth_events),
                truth_vehicles: p.map(|p| p.report.truth_vehicles),
            }
        }),
    )?;
    write_csv(
        &dir.join("switches.csv"),
        results.switches.iter().map(|(k, s)| SwitchCsv {
            weather: k.weather.name(),
            network: &k.network,
            seed: k.seed,
            t: s.t,
            c: s.c,
            beta_e: s.beta_e as u8,
        }),
    )?;
    write_csv(
        &dir.join("anova.csv"),
        results.anova.iter().map(|a| {
            let r = a.outcome.as_ref().ok();
            AnovaCsv {
                factor: a.factor,
                strategy: a.strategy.name(),
                metric: a.metric,
                coefficient: r.map(|r| r.coefficient),
                f: r.map(|r| r.f),
                p_value: r.and_then(|r| r.p_value),
                mean_level0: r.map(|r| r.group_means[0]),
                mean_level1: r.map(|r| r.group_means[1]),
                n_level0: r.map(|r| r.group_sizes[0]),
                n_level1: r.map(|r| r.group_sizes[1]),
                note: match &a.outcome {
                    Ok(r) if r.is_degenerate() => "degenerate: zero within-group variance",
                    Ok(_) => "",
                    Err(e) => e,
                },
            }
        }),
    )?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, summary_text(results)).map_err(|e| Error::config(&summary, e))?;
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

/// Per-weather comparison table plus the variance analyses.
pub fn summary_text(results: &ExperimentResults) -> String {
    let mut by_weather: BTreeMap<(WeatherKind, SeriesLabel), Vec<&ErrorReport>> = BTreeMap::new();
    for r in &results.rows {
        by_weather.entry((r.key.weather, r.series)).or_default().push(&r.report);
    }
    let mut weathers: Vec<WeatherKind> = results.rows.iter().map(|r| r.key.weather).collect();
    weathers.sort();
    weathers.dedup();

    let mut s = String::new();
    let _ = writeln!(s, "Detection errors pooled over seeds and network states");
    let _ = writeln!(s, "(cloud+ / cloud-: cloud strategy on good / bad link frames)\n");
    for w in weathers {
        let _ = writeln!(s, "[{w}]");
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10} {:>10} {:>8} {:>10}",
            "series", "congestion", "speed", "rms mph", "runs", "vehicles"
        );
        for label in SeriesLabel::TABLE {
            if let Some(reports) = by_weather.get(&(w, label)) {
                let p = pool(reports);
                let _ = writeln!(
                    s,
                    "{:<8} {:>10} {:>10} {:>10.2} {:>8} {:>10}",
                    label.name(),
                    pct(p.congestion),
                    pct(Some(p.speed)),
                    p.rms_mph,
                    reports.len(),
                    format!("{}/{}", p.matched_vehicles, p.truth_vehicles),
                );
            }
        }
        let _ = writeln!(s);
    }
    if !results.anova.is_empty() {
        let _ = writeln!(s, "One-way ANOVA (coefficient = level-1 mean minus level-0 mean)");
        for a in &results.anova {
            match &a.outcome {
                Ok(r) => {
                    let _ = writeln!(
                        s,
                        "{:<12} {:<6} {:<10} coef {:+.4}  F {:.4}  p {}",
                        a.factor,
                        a.strategy.name(),
                        a.metric,
                        r.coefficient,
                        r.f,
                        r.p_value.map_or_else(|| "degenerate".to_string(), |p| format!("{p:.3e}"))
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "{:<12} {:<6} {:<10} not computed: {e}", a.factor, a.strategy.name(), a.metric);
                }
            }
        }
    }
    s
}

/// Rate sweep used to place the hybrid threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    pub weather: WeatherKind,
    /// Link rates as fractions of the required rate; `inf` for no limit.
    pub rates: Vec<f64>,
    pub scenario: DeskScenario,
    pub pipeline: PipelineParams,
    pub channel: ChannelParams,
    pub gates: MatchGates,
    /// Cloud counts as no worse than edge within this margin.
    pub margin: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seeds: vec![1],
            weather: WeatherKind::Sunny,
            rates: vec![f64::INFINITY, 0.75, 0.5, 0.3],
            scenario: DeskScenario::default(),
            pipeline: PipelineParams::default(),
            channel: ChannelParams::default(),
            gates: MatchGates::default(),
            margin: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rate_fraction: f64,
    pub edge: ErrorReport,
    pub cloud: ErrorReport,
}

impl SweepRow {
    /// Cloud no worse than edge on either error, within `margin`.
    pub fn cloud_ok(&self, margin: f64) -> bool {
        let c = |r: &ErrorReport| r.congestion.unwrap_or(0.0);
        self.cloud.speed <= self.edge.speed + margin && c(&self.cloud) <= c(&self.edge) + margin
    }
}

/// Runs edge once per seed and cloud at every rate; reports are pooled over seeds.
pub fn sweep_rates(cfg: &SweepConfig, mut progress: impl FnMut(u64, f64)) -> Result<Vec<SweepRow>> {
    if cfg.rates.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one rate and one seed".into()));
    }
    if let Some(r) = cfg.rates.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidArgument(format!("rates must be positive, got {r}")));
    }
    let spec = video_spec(cfg.scenario.duration);
    let required = required_rate(spec.fps);
    let mut edge = Vec::new();
    let mut cloud = vec![Vec::new(); cfg.rates.len()];
    for &seed in &cfg.seeds {
        let script = DeskScenario {
            seed,
            ..cfg.scenario.clone()
        }
        .build();
        let renderer = SceneRenderer::new(script.clone(), spec)?;
        let truth = renderer.ground_truth().clone();
        let geometry = SceneGeometry::from_script(&script, spec.width, spec.height)?;
        let source = WeatheredSource::new(renderer, WeatherModel::preset(cfg.weather, seed));
        for (k, &frac) in cfg.rates.iter().enumerate() {
            progress(seed, frac);
            let mut link = LinkSetup::new(LinkTrace::constant(frac * required, spec.duration)?);
            link.channel = cfg.channel;
            let strategies: &[Strategy] = if k == 0 {
                &[Strategy::Edge, Strategy::Cloud]
            } else {
                &[Strategy::Cloud]
            };
            let run = run_strategies(&source, &geometry, &cfg.pipeline, &link, strategies)?;
            for s in &run.series {
                let r = super::metrics::evaluate(&s.congested, &s.speed_reports(), &truth, cfg.gates)?;
                match s.strategy {
                    Strategy::Edge => edge.push(r),
                    _ => cloud[k].push(r),
                }
            }
        }
    }
    let edge = pool(&edge.iter().collect::<Vec<_>>());
    Ok(cfg
        .rates
        .iter()
        .zip(&cloud)
        .map(|(&rate_fraction, c)| SweepRow {
            rate_fraction,
            edge,
            cloud: pool(&c.iter().collect::<Vec<_>>()),
        })
        .collect())
}

/// Threshold between the lowest swept condition where cloud is still no
/// worse than edge and the next lower one. `None` without such a crossover.
pub fn derive_threshold(rows: &[SweepRow], margin: f64) -> Option<f64> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.rate_fraction.total_cmp(&a.rate_fraction));
    let cond = |r: &SweepRow| r.rate_fraction.min(1.0);
    let first_bad = sorted.iter().position(|r| !r.cloud_ok(margin))?;
    if first_bad == 0 {
        return None;
    }
    Some(0.5 * (cond(sorted[first_bad - 1]) + cond(sorted[first_bad])))
}

/// CSV rows: `rate_fraction,strategy,congestion_error,speed_error,rms_mph`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        rate_fraction: f64,
        strategy: &'a str,
        congestion_error: Option<f64>,
        speed_error: f64,
        rms_mph: f64,
    }
    write_csv(
        path,
        rows.iter().flat_map(|r| {
            [("edge", &r.edge), ("cloud", &r.cloud)].map(|(strategy, e)| Row {
                rate_fraction: r.rate_fraction,
                strategy,
                congestion_error: e.congestion,
                speed_error: e.speed,
                rms_mph: e.rms_mph,
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(speed: f64, cong: Option<f64>) -> ErrorReport {
        ErrorReport {
            congestion: cong,
            speed,
            ..ErrorReport::default()
        }
    }

    #[test]
    fn config_defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap(), ".").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cells(&cfg).len(), 3 * 2 * 5);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
seeds = [7]
weathers = ["snowy"]
strategies = ["edge", "hybrid"]
[scenario]
duration = 12.0
[[networks]]
name = "slow"
bad = true
trace = { kind = "constant", fraction = 0.4 }
"#,
            ".",
        )
        .unwrap();
        assert_eq!(cfg.scenario.duration, 12.0);
        assert_eq!(cfg.scenario.mean_headway, DeskScenario::default().mean_headway);
        assert_eq!(cfg.networks[0].trace, TraceSpec::Constant { fraction: 0.4 });
        assert_eq!(cfg.policy, HybridPolicy::default());
    }

    #[test]
    fn missing_trace_names_the_path() {
        let err = ExperimentConfig::from_toml(
            r#"
[[networks]]
name = "file"
trace = { kind = "file", path = "no/such/trace.csv" }
"#,
            "/nonexistent",
        )
        .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, Path::new("/nonexistent/no/such/trace.csv")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::load("/nonexistent/experiment.toml"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("seedz = [1]", ".").is_err());
    }

    #[test]
    fn limited_trace_defaults_to_middle_third() {
        let t = TraceSpec::Limited {
            limit: 0.5,
            base: None,
            window: None,
        }
        .build(100.0, 30.0, Path::new("."))
        .unwrap();
        assert_eq!(t.rate_at(5.0), f64::INFINITY);
        assert_eq!(t.rate_at(15.0), 50.0);
        assert_eq!(t.rate_at(25.0), f64::INFINITY);
    }

    #[test]
    fn pooling_weights_by_vehicles_and_events() {
        let mut a = report(0.1, Some(0.0));
        a.truth_vehicles = 1;
        a.rms_mph = 1.0;
        a.events = EventCounts {
            truth_events: 1,
            detected_events: 1,
            missed: 0,
            spurious: 0,
        };
        let mut b = report(0.4, Some(1.0));
        b.truth_vehicles = 3;
        b.rms_mph = 3.0;
        b.events = EventCounts {
            truth_events: 3,
            detected_events: 0,
            missed: 3,
            spurious: 0,
        };
        let p = pool(&[&a, &b]);
        assert!((p.speed - (0.1 + 1.2) / 4.0).abs() < 1e-12);
        assert!((p.rms_mph - ((1.0 + 27.0) / 4.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(p.congestion, Some(0.75));
    }

    #[test]
    fn threshold_sits_between_ok_and_bad_rates() {
        let row = |f: f64, c: f64| SweepRow {
            rate_fraction: f,
            edge: report(0.05, Some(0.0)),
            cloud: report(c, Some(0.0)),
        };
        let rows = [row(0.3, 0.9), row(f64::INFINITY, 0.01), row(0.9, 0.03), row(0.75, 0.5)];
        assert_eq!(derive_threshold(&rows, 0.0), Some(0.825));
        assert_eq!(derive_threshold(&rows[1..2], 0.0), None);
        assert_eq!(derive_threshold(&[row(1.0, 0.5)], 0.0), None);
    }

    #[test]
    fn factor_analysis_uses_the_right_series() {
        let mut rows = Vec::new();
        for (i, weather) in [WeatherKind::Sunny, WeatherKind::Snowy].into_iter().enumerate() {
            for (j, bad) in [false, true].into_iter().enumerate() {
                for seed in 0..3u64 {
                    let key = RunKey {
                        weather,
                        network: if bad { "bad".into() } else { "good".into() },
                        seed,
                    };
                    let jitter = seed as f64 * 1e-3;
                    for (series, speed) in [
                        (SeriesLabel::Edge, 0.1 + 0.5 * i as f64 + jitter),
                        (SeriesLabel::Cloud, 0.05 + 0.8 * j as f64 + jitter),
                    ] {
                        rows.push(ResultRow {
                            key: key.clone(),
                            bad_network: bad,
                            series,
                            frames: 10,
                            report: report(speed, None),
                        });
                    }
                }
            }
        }
        let a = factor_analyses(&rows);
        let find = |f: &str, m: &str| a.iter().find(|r| r.factor == f && r.metric == m).unwrap();
        let net = find("bad_network", "speed").outcome.as_ref().unwrap();
        assert!((net.coefficient - 0.8).abs() < 1e-9);
        assert!(net.p_value.unwrap() < 1e-6);
        let snow = find("snowy", "speed").outcome.as_ref().unwrap();
        assert!((snow.coefficient - 0.5).abs() < 1e-9);
        // no congestion events anywhere: nothing to analyze
        assert!(find("snowy", "congestion").outcome.is_err());
    }
}
