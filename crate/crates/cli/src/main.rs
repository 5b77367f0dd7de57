use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tiermon_core::channel::LinkTrace;
use tiermon_core::congestion::calibrate_area_threshold;
use tiermon_core::eval::{
    derive_threshold, load_script, run_experiment, summary_text, sweep_rates, write_reports, write_sweep_csv,
    ExperimentConfig, SweepConfig,
};
use tiermon_core::rawio::{load_raw_sequence, write_source};
use tiermon_core::scenario::{single_stop_scene, video_spec, DeskScenario};
use tiermon_core::scene::SceneRenderer;
use tiermon_core::source::{FrameSource, VecSource, WeatheredSource};
use tiermon_core::speed::write_reports_csv;
use tiermon_core::tier::{
    required_rate, run_strategies, write_switch_log, LinkSetup, PipelineConfig, PipelineParams, SceneGeometry,
    Strategy,
};
use tiermon_core::weather::{WeatherKind, WeatherModel};

#[derive(Parser)]
#[command(name = "tiermon", version, about = "Edge/cloud traffic monitoring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write results.csv, curves.csv, switches.csv, anova.csv and summary.txt.
    Run(RunArgs),
    /// Sweep link rates, compare cloud with edge and derive the hybrid threshold.
    SweepThreshold(SweepArgs),
    /// Print area thresholds per tier, optionally measuring a stopped vehicle.
    CalibrateTauA(CalibrateArgs),
    /// Write a link trace CSV: base rate with a limited window.
    MakeTrace(TraceArgs),
    /// Render a generated scene to a raw sequence file.
    Render(RenderArgs),
    /// Run one strategy over a raw sequence file.
    Detect(DetectArgs),
    /// Print the default experiment config.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to these strategies (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Run only these seeds (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    weather: Vec<WeatherKind>,
    /// Override the scenario duration, seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory; overrides the TIERMON_OUT variable and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rate fractions of the required rate; `inf` for no limit.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    weather: Option<WeatherKind>,
    #[arg(long)]
    duration: Option<f64>,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Vehicle footprints covered by the threshold.
    #[arg(long, default_value_t = 3.0)]
    vehicles: f64,
    /// Render a single stopped vehicle and report the stopped area each tier sees.
    #[arg(long)]
    measure: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    duration: f64,
    /// Rate outside the window, bytes/s; unlimited when absent.
    #[arg(long)]
    base_rate: Option<f64>,
    /// Rate inside the window, bytes/s.
    #[arg(long, conflicts_with = "limit_fraction")]
    limit_rate: Option<f64>,
    /// Rate inside the window as a fraction of the rate needed for every cloud frame.
    #[arg(long)]
    limit_fraction: Option<f64>,
    /// Window start and end, seconds; the middle third when absent.
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    limit_window: Option<Vec<f64>>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "sunny")]
    weather: WeatherKind,
    /// Render this scene script instead of generated traffic.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the scene script (TOML) here.
    #[arg(long)]
    script_out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Scene script giving the geometry (scale, road, referential lines).
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value = "edge")]
    strategy: Strategy,
    /// Link trace CSV for cloud and hybrid; unlimited when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Run(a) => run(a),
        Command::SweepThreshold(a) => sweep(a),
        Command::CalibrateTauA(a) => calibrate(a),
        Command::MakeTrace(a) => make_trace(a),
        Command::Render(a) => render(a),
        Command::Detect(a) => detect(a),
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml()?);
            Ok(())
        }
    }
}

fn run(a: RunArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !a.strategy.is_empty() {
        cfg.strategies = a.strategy;
    }
    if !a.seed.is_empty() {
        cfg.seeds = a.seed;
    }
    if !a.weather.is_empty() {
        cfg.weathers = a.weather;
    }
    if let Some(d) = a.duration {
        cfg.scenario.duration = d;
    }
    let out = cfg.output_dir(a.out.as_deref());
    let quiet = a.quiet;
    let results = run_experiment(&cfg, |i, n, k| {
        if !quiet {
            eprintln!("[{}/{n}] {} / {} / seed {}", i + 1, k.weather, k.network, k.seed);
        }
    })?;
    write_reports(&results, &out)?;
    if !quiet {
        print!("{}", summary_text(&results));
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => SweepConfig::default(),
    };
    if !a.rates.is_empty() {
        cfg.rates = a.rates;
    }
    if !a.seed.is_empty() {
        cfg.seeds = a.seed;
    }
    if let Some(w) = a.weather {
        cfg.weather = w;
    }
    if let Some(d) = a.duration {
        cfg.scenario.duration = d;
    }
    let quiet = a.quiet;
    let rows = sweep_rates(&cfg, |seed, frac| {
        if !quiet {
            eprintln!("seed {seed}, rate {frac}");
        }
    })?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:>8} {:>8} {:>12} {:>10} {:>10}", "rate", "scheme", "congestion", "speed", "rms mph")?;
    for r in &rows {
        for (name, e) in [("edge", &r.edge), ("cloud", &r.cloud)] {
            writeln!(
                out,
                "{:>8} {:>8} {:>12} {:>9.2}% {:>10.2}",
                r.rate_fraction,
                name,
                e.congestion.map_or("n/a".into(), |c| format!("{:.2}%", 100.0 * c)),
                100.0 * e.speed,
                e.rms_mph
            )?;
        }
    }
    match derive_threshold(&rows, cfg.margin) {
        Some(t) => writeln!(
            out,
            "threshold: {t:.3} (about {:.0} KB/s)",
            t * required_rate(video_spec(cfg.scenario.duration).fps) / 1e3
        )?,
        None => writeln!(out, "threshold: no crossover in the swept rates")?,
    }
    if let Some(p) = &a.out {
        write_sweep_csv(p, &rows)?;
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let scenario = DeskScenario::default();
    let script = scenario.build();
    let spec = scenario.spec();
    let geo = SceneGeometry::from_script(&script, spec.width, spec.height)?;
    let params = PipelineParams::default();
    println!("{:>6} {:>10} {:>12} {:>14}", "tier", "pixels", "m/pixel", "threshold px");
    for (name, cfg) in [("cloud", PipelineConfig::CONFIGURATION_1), ("edge", PipelineConfig::CONFIGURATION_2)] {
        let mpp = geo.meters_per_pixel * spec.width as f64 / cfg.width as f64;
        println!(
            "{name:>6} {:>10} {mpp:>12.3} {:>14.1}",
            format!("{}x{}", cfg.width, cfg.height),
            calibrate_area_threshold(geo.vehicle_size_m, mpp, a.vehicles)
        );
    }
    if a.measure {
        let (script, _) = single_stop_scene(15.0, 2.0, a.seed);
        let spec = video_spec(24.0);
        let source = SceneRenderer::new(script.clone(), spec)?;
        let geo = SceneGeometry::from_script(&script, spec.width, spec.height)?;
        let link = LinkSetup::new(LinkTrace::constant(f64::INFINITY, spec.duration)?);
        let run = run_strategies(&source, &geo, &params, &link, &[Strategy::Cloud, Strategy::Edge])?;
        for s in &run.series {
            let peak = s.area.iter().copied().max().unwrap_or(0);
            let cfg = match s.strategy {
                Strategy::Edge => PipelineConfig::CONFIGURATION_2,
                _ => PipelineConfig::CONFIGURATION_1,
            };
            let mpp = geo.meters_per_pixel * spec.width as f64 / cfg.width as f64;
            let one = calibrate_area_threshold(geo.vehicle_size_m, mpp, 1.0);
            println!(
                "measured {}: peak stopped area {peak} px = {:.2} vehicle footprints",
                s.strategy,
                peak as f64 / one
            );
        }
    }
    Ok(())
}

fn make_trace(a: TraceArgs) -> CliResult {
    let base = a.base_rate.unwrap_or(f64::INFINITY);
    let limit = match (a.limit_rate, a.limit_fraction) {
        (Some(r), _) => r,
        (None, Some(f)) => f * required_rate(video_spec(a.duration).fps),
        (None, None) => return Err("one of --limit-rate or --limit-fraction is required".into()),
    };
    let window = a
        .limit_window
        .map_or((a.duration / 3.0, 2.0 * a.duration / 3.0), |w| (w[0], w[1]));
    let trace = LinkTrace::limited(base, limit, window, a.duration)?;
    match a.out {
        Some(p) => trace.write_csv(BufWriter::new(create(&p)?))?,
        None => trace.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn create(p: &Path) -> Result<File, String> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    File::create(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn render(a: RenderArgs) -> CliResult {
    let script = match &a.script {
        Some(p) => load_script(p)?,
        None => DeskScenario {
            duration: a.duration,
            seed: a.seed,
            ..DeskScenario::default()
        }
        .build(),
    };
    let spec = video_spec(a.duration);
    let renderer = SceneRenderer::new(script.clone(), spec)?;
    let source = WeatheredSource::new(renderer, WeatherModel::preset(a.weather, a.seed));
    write_source(BufWriter::new(create(&a.out)?), &source)?;
    if let Some(p) = &a.script_out {
        fs::write(p, toml::to_string(&script)?).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    eprintln!("wrote {} frames to {}", source.len(), a.out.display());
    Ok(())
}

fn detect(a: DetectArgs) -> CliResult {
    let script = load_script(&a.script)?;
    let (header, frames) = load_raw_sequence(&a.input)?;
    let source = VecSource::new(frames, header.fps());
    let spec = *source.spec();
    let geo = SceneGeometry::from_script(&script, spec.width, spec.height)?;
    let duration = source.len() as f64 / spec.fps;
    let trace = match &a.trace {
        Some(p) => LinkTrace::load_csv(p, duration)?,
        None => LinkTrace::constant(f64::INFINITY, duration)?,
    };
    let run = run_strategies(&source, &geo, &PipelineParams::default(), &LinkSetup::new(trace), &[a.strategy])?;
    let series = &run.series[0];
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let mut w = BufWriter::new(create(&a.out.join("congestion.csv"))?);
    writeln!(w, "frame,area,congested,tier")?;
    for i in 0..series.congested.len() {
        writeln!(w, "{i},{},{},{}", series.area[i], series.congested[i] as u8, series.tier[i].name())?;
    }
    w.flush()?;
    write_reports_csv(create(&a.out.join("speeds.csv"))?, &series.speed_reports())?;
    if a.strategy == Strategy::Hybrid {
        write_switch_log(create(&a.out.join("switches.csv"))?, &run.switch_log)?;
    }
    let flagged = series.congested.iter().filter(|&&c| c).count();
    println!(
        "{} frames, {} congested, {} speed reports",
        series.congested.len(),
        flagged,
        series.reports.len()
    );
    Ok(())
}
