//! Monte Carlo simulation harness: scene synthesis, scenario presets,
//! error metrics, and deterministic trial execution.
//!
//! Trials are independent; each derives its RNG stream from
//! `seed ^ trial_index`, so results are identical for any worker count
//! or scheduling. With the `parallel` feature (default) trials run on a
//! rayon pool; the sequential path is always available and produces
//! byte-identical output.

mod config;
mod io;
mod metrics;
mod run;
mod stats;
mod synth;

pub use config::{
    scenario_preset, shape_preset, LedSpec, PoseSampler, Scenario, ScenarioConfig, ShapePreset,
};
pub use io::{export_cdf, summary_json, trials_csv, CdfError, TRIALS_CSV_HEADER};
pub use metrics::{position_error, rotation_error_deg};
pub use run::{
    run_monte_carlo, run_monte_carlo_seq, run_monte_carlo_with_workers, MonteCarloRun, SimError,
    TrialResult, TrialStatus,
};
pub use stats::SummaryStats;
pub use synth::{noise_free_polyline, sample_pose, synthesize_contour, synthesize_scene, SynthError};
