//! Deterministic Monte Carlo execution.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Pose;
use crate::db::DbError;
use crate::freepnp::freepnp;
use crate::refine::{refine, Diagnostics};

use super::config::ScenarioConfig;
use super::metrics::{position_error, rotation_error_deg};
use super::stats::{summarize, SummaryStats};
use super::synth::synthesize_scene;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("{failed} of {trials} trials failed (>5%); scenario considered infeasible")]
    TooManyFailures { failed: usize, trials: u64 },
}

/// Where a trial's pipeline stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    PoseSampling,
    FreePnp,
    Refine,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::PoseSampling => "pose_sampling",
            TrialStatus::FreePnp => "freepnp",
            TrialStatus::Refine => "refine",
        }
    }
}

/// One trial's record. Failed trials carry their status and whatever
/// was known at the point of failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: u64,
    pub status: TrialStatus,
    pub truth: Option<Pose>,
    pub estimate: Option<Pose>,
    pub ep_m: Option<f64>,
    pub er_deg: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

/// A full Monte Carlo run: per-trial records in trial order plus the
/// aggregate statistics over the successful trials.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub stats: SummaryStats,
    pub trials: Vec<TrialResult>,
    pub succeeded: usize,
    pub failed: usize,
    pub failure_counts: BTreeMap<String, usize>,
}

fn run_trial(config: &ScenarioConfig, db: &crate::db::Database, trial_index: u64) -> TrialResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ trial_index);
    let failed = |status: TrialStatus, truth: Option<Pose>| TrialResult {
        trial_index,
        status,
        truth,
        estimate: None,
        ep_m: None,
        er_deg: None,
        diagnostics: None,
    };
    let (truth, scene) = match synthesize_scene(config, db, &mut rng) {
        Ok(v) => v,
        Err(_) => return failed(TrialStatus::PoseSampling, None),
    };
    let init = match freepnp(&scene, &config.freepnp) {
        Ok(p) => p,
        Err(_) => return failed(TrialStatus::FreePnp, Some(truth)),
    };
    let outcome = match refine(&init, &scene, &config.refine) {
        Ok(o) => o,
        Err(_) => return failed(TrialStatus::Refine, Some(truth)),
    };
    let ep = position_error(&truth.camera_center(), &outcome.pose.camera_center());
    let er = rotation_error_deg(&truth.rotation(), &outcome.pose.rotation());
    TrialResult {
        trial_index,
        status: TrialStatus::Ok,
        truth: Some(truth),
        estimate: Some(outcome.pose),
        ep_m: Some(ep),
        er_deg: Some(er),
        diagnostics: Some(outcome.diagnostics),
    }
}

fn validate(config: &ScenarioConfig) -> Result<(), SimError> {
    if config.trials == 0 {
        return Err(SimError::Config("trials must be >= 1".into()));
    }
    if config.noise_std_px < 0.0 {
        return Err(SimError::Config("noise_std_px must be >= 0".into()));
    }
    if config.min_visible_leds < 2 {
        return Err(SimError::Config("min_visible_leds must be >= 2".into()));
    }
    config.camera.validate().map_err(|e| SimError::Config(e.to_string()))?;
    Ok(())
}

fn aggregate(config: &ScenarioConfig, mut trials: Vec<TrialResult>) -> Result<MonteCarloRun, SimError> {
    trials.sort_by_key(|t| t.trial_index);
    let mut failure_counts = BTreeMap::new();
    let mut ep = Vec::new();
    let mut er = Vec::new();
    for t in &trials {
        match t.status {
            TrialStatus::Ok => {
                ep.push(t.ep_m.expect("ok trial has ep"));
                er.push(t.er_deg.expect("ok trial has er"));
            }
            other => {
                *failure_counts.entry(other.as_str().to_string()).or_insert(0) += 1;
            }
        }
    }
    let failed = trials.len() - ep.len();
    if (failed as f64) > 0.05 * config.trials as f64 {
        return Err(SimError::TooManyFailures { failed, trials: config.trials });
    }
    if ep.is_empty() {
        return Err(SimError::TooManyFailures { failed, trials: config.trials });
    }
    Ok(MonteCarloRun {
        stats: summarize(&ep, &er),
        succeeded: ep.len(),
        failed,
        failure_counts,
        trials,
    })
}

/// Run every trial sequentially. Always available; the parallel runner
/// produces identical results.
pub fn run_monte_carlo_seq(config: &ScenarioConfig) -> Result<MonteCarloRun, SimError> {
    validate(config)?;
    let db = config.database()?;
    let trials: Vec<TrialResult> =
        (0..config.trials).map(|i| run_trial(config, &db, i)).collect();
    aggregate(config, trials)
}

/// Run the scenario's trials, in parallel when the `parallel` feature
/// is enabled (distributed over the current rayon pool), sequentially
/// otherwise. Output is independent of worker count and scheduling.
pub fn run_monte_carlo(config: &ScenarioConfig) -> Result<MonteCarloRun, SimError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        validate(config)?;
        let db = config.database()?;
        let trials: Vec<TrialResult> = (0..config.trials)
            .into_par_iter()
            .map(|i| run_trial(config, &db, i))
            .collect();
        aggregate(config, trials)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_monte_carlo_seq(config)
    }
}

/// Run with an explicit worker count: 1 forces the sequential path,
/// `None` uses the default pool. Results are byte-identical for every
/// choice.
#[cfg(feature = "parallel")]
pub fn run_monte_carlo_with_workers(
    config: &ScenarioConfig,
    workers: Option<usize>,
) -> Result<MonteCarloRun, SimError> {
    match workers {
        Some(1) => run_monte_carlo_seq(config),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::Config(format!("worker pool: {e}")))?
            .install(|| run_monte_carlo(config)),
        None => run_monte_carlo(config),
    }
}

/// Sequential build: the worker count is ignored.
#[cfg(not(feature = "parallel"))]
pub fn run_monte_carlo_with_workers(
    config: &ScenarioConfig,
    _workers: Option<usize>,
) -> Result<MonteCarloRun, SimError> {
    run_monte_carlo_seq(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{scenario_preset, Scenario};

    fn small_config(trials: u64, seed: u64, noise: f64) -> ScenarioConfig {
        let mut cfg = scenario_preset(Scenario::A);
        cfg.trials = trials;
        cfg.seed = seed;
        cfg.noise_std_px = noise;
        cfg
    }

    #[test]
    fn zero_noise_trials_recover_exactly() {
        let cfg = small_config(8, 11, 0.0);
        let run = run_monte_carlo(&cfg).unwrap();
        assert_eq!(run.succeeded + run.failed, 8);
        assert!(run.failed == 0, "failures: {:?}", run.failure_counts);
        assert!(run.stats.mpe_m < 1e-4, "mpe {}", run.stats.mpe_m);
        assert!(run.stats.mre_deg < 1e-4, "mre {}", run.stats.mre_deg);
    }

    #[test]
    fn sequential_and_parallel_agree_exactly() {
        let cfg = small_config(6, 3, 2.0);
        let seq = run_monte_carlo_seq(&cfg).unwrap();
        let par = run_monte_carlo(&cfg).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let cfg = small_config(5, 99, 2.0);
        let a = run_monte_carlo(&cfg).unwrap();
        let b = run_monte_carlo(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failure_accounting_sums() {
        let cfg = small_config(6, 21, 2.0);
        let run = run_monte_carlo(&cfg).unwrap();
        let counted: usize = run.failure_counts.values().sum();
        assert_eq!(run.failed, counted);
        assert_eq!(run.succeeded + run.failed, run.trials.len());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small_config(0, 0, 2.0);
        assert!(matches!(run_monte_carlo(&cfg), Err(SimError::Config(_))));
        cfg = small_config(2, 0, -1.0);
        assert!(matches!(run_monte_carlo(&cfg), Err(SimError::Config(_))));
        cfg = small_config(2, 0, 2.0);
        cfg.min_visible_leds = 1;
        assert!(matches!(run_monte_carlo(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn infeasible_scenario_aborts() {
        let mut cfg = small_config(4, 1, 2.0);
        cfg.pose_sampler.height_range = [1.4, 1.5];
        assert!(matches!(
            run_monte_carlo(&cfg),
            Err(SimError::TooManyFailures { .. })
        ));
    }
}
