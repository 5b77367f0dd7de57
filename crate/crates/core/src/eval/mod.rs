//! Ground-truth evaluation: error metrics, sliding-window analysis, ANOVA
//! and the experiment runner.

mod anova;
mod experiment;
mod metrics;
mod window;

pub use anova::{f_statistic, f_survival, one_way_anova, pooled_t, regularized_beta, AnovaResult};
pub use metrics::{
    congestion_error, count_events, evaluate, evaluate_ranges, events, mask_ranges, match_reports, rms_error,
    speed_error, ErrorReport, EventCounts, MatchGates, SpeedPair, VehicleMatch,
};
pub use window::{bad_frames, select_window, sliding_window_errors, WindowCurve, WindowPoint};
pub use experiment::{
    cells, derive_threshold, factor_analyses, load_script, pool, run_cell, run_experiment, summary_text, sweep_rates,
    write_reports, write_sweep_csv, AnovaRow, CurveRow, EvalSettings, ExperimentConfig, ExperimentResults,
    NetworkSpec, ResultRow, RunKey, SeriesLabel, SweepConfig, SweepRow, TraceSpec, OUT_DIR_ENV,
};
