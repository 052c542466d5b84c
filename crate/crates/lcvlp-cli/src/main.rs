//! Command-line interface: scenario simulation, single-shot
//! localization, database validation, and CDF export.
//!
//! Exit codes, stable per error class:
//!   0  success
//!   1  I/O or parse failure
//!   2  unknown LED id
//!   3  fewer than two usable observations
//!   4  pose estimation / refinement failure
//!   5  infeasible scenario (pose rejection cap or >5% trial failures)
//!   6  validation failure (config, database, or observation contents)
//!  64  command-line usage error

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use lcvlp::db::{Database, DbError};
use lcvlp::freepnp::{freepnp, FreePnpError};
use lcvlp::refine::{refine, RefineError};
use lcvlp::scene::{ObservationSet, SceneError};
use lcvlp::sim::{
    self, run_monte_carlo_with_workers, scenario_preset, shape_preset, Scenario, ScenarioConfig,
    ShapePreset, SimError,
};

#[derive(Parser)]
#[command(
    name = "lcvlp",
    about = "Camera pose estimation from Lamé-curve LED contours",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo scenario and write trials.csv + summary.json.
    Simulate(SimulateArgs),
    /// Estimate a camera pose from one observation document.
    Localize(LocalizeArgs),
    /// Validate an LED database document.
    DbValidate(DbValidateArgs),
    /// Convert a trials.csv into sorted CDF rows for both error metrics.
    ExportCdf(ExportCdfArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario preset: A|B|C|D or a shape name
    /// (rhombus|square|ellipse|circle|rectangle).
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario config document (JSON mirroring the preset structure).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for trials.csv and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<u64>,
    /// Base RNG seed; trial k derives its stream from seed ^ k.
    #[arg(long)]
    seed: Option<u64>,
    /// Contour noise standard deviation, pixels.
    #[arg(long)]
    noise_std: Option<f64>,
    /// Scale factor applied to every LED's semi-axes.
    #[arg(long)]
    led_scale: Option<f64>,
    /// Contour subsampling ratio ς used by the refinement.
    #[arg(long)]
    sampling_ratio: Option<f64>,
    /// Virtual correspondences per LED in the initializer.
    #[arg(long)]
    samples_per_led: Option<usize>,
    /// Worker threads (default: all cores; results identical either way).
    #[arg(long)]
    workers: Option<usize>,
    /// Dotted-path config overrides, e.g. --set pose_sampler.max_tilt_rad=0.3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct LocalizeArgs {
    /// LED database document (led-db.json).
    #[arg(long)]
    db: PathBuf,
    /// Observation document (obs.json).
    #[arg(long)]
    obs: PathBuf,
    /// Output pose document.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DbValidateArgs {
    /// LED database document to validate.
    #[arg(long)]
    db: PathBuf,
}

#[derive(Args)]
struct ExportCdfArgs {
    /// trials.csv produced by `simulate`.
    #[arg(long)]
    trials: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// An error carrying its process exit code.
struct CliError {
    code: u8,
    source: anyhow::Error,
}

type CliResult = Result<(), CliError>;

fn fail(code: u8, source: anyhow::Error) -> CliError {
    CliError { code, source }
}

fn io_err(e: impl Into<anyhow::Error>) -> CliError {
    fail(1, e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; remap usage errors to 64
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(64),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Localize(args) => localize(args),
        Command::DbValidate(args) => db_validate(args),
        Command::ExportCdf(args) => export_cdf(args),
    }
}

fn parse_scenario(name: &str) -> Result<ScenarioConfig, CliError> {
    let cfg = match name {
        "A" | "a" => scenario_preset(Scenario::A),
        "B" | "b" => scenario_preset(Scenario::B),
        "C" | "c" => scenario_preset(Scenario::C),
        "D" | "d" => scenario_preset(Scenario::D),
        "rhombus" => shape_preset(ShapePreset::Rhombus),
        "square" => shape_preset(ShapePreset::Square),
        "ellipse" => shape_preset(ShapePreset::Ellipse),
        "circle" => shape_preset(ShapePreset::Circle),
        "rectangle" | "rect" => shape_preset(ShapePreset::Rectangle),
        other => {
            return Err(fail(
                6,
                anyhow!("unknown scenario {other:?} (expected A|B|C|D or a shape name)"),
            ))
        }
    };
    Ok(cfg)
}

/// Apply one `key=value` override onto the JSON form of the config.
fn apply_override(doc: &mut serde_json::Value, spec: &str) -> anyhow::Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not KEY=VALUE"))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            match node {
                serde_json::Value::Object(map) => {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                serde_json::Value::Array(arr) => {
                    let idx: usize = part.parse().context("array index")?;
                    let slot =
                        arr.get_mut(idx).ok_or_else(|| anyhow!("index {idx} out of range"))?;
                    *slot = value;
                    return Ok(());
                }
                _ => return Err(anyhow!("cannot set {path:?}: not an object")),
            }
        }
        node = match node {
            serde_json::Value::Object(map) => map
                .get_mut(*part)
                .ok_or_else(|| anyhow!("unknown config field {part:?} in {path:?}"))?,
            serde_json::Value::Array(arr) => {
                let idx: usize = part.parse().context("array index")?;
                arr.get_mut(idx).ok_or_else(|| anyhow!("index {idx} out of range"))?
            }
            _ => return Err(anyhow!("cannot descend into {part:?} in {path:?}")),
        };
    }
    Ok(())
}

fn sim_error_code(e: &SimError) -> u8 {
    match e {
        SimError::Config(_) | SimError::Db(_) => 6,
        SimError::TooManyFailures { .. } => 5,
    }
}

fn simulate(args: SimulateArgs) -> CliResult {
    let mut config = match (&args.scenario, &args.config) {
        (Some(name), None) => parse_scenario(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(io_err)?;
            ScenarioConfig::from_json(&text).map_err(io_err)?
        }
        (None, None) => {
            return Err(fail(6, anyhow!("one of --scenario or --config is required")))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    if !args.overrides.is_empty() {
        let mut doc = serde_json::to_value(&config).map_err(io_err)?;
        for spec in &args.overrides {
            apply_override(&mut doc, spec).map_err(|e| fail(6, e))?;
        }
        config = serde_json::from_value(doc)
            .map_err(|e| fail(6, anyhow!("override produced invalid config: {e}")))?;
    }
    if let Some(v) = args.trials {
        config.trials = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.noise_std {
        config.noise_std_px = v;
    }
    if let Some(v) = args.sampling_ratio {
        config.refine.sampling_ratio = v;
    }
    if let Some(v) = args.samples_per_led {
        config.freepnp.samples_per_led = v;
    }
    if let Some(v) = args.led_scale {
        config.scale_leds(v);
    }

    let run = run_monte_carlo_with_workers(&config, args.workers)
        .map_err(|e| fail(sim_error_code(&e), e.into()))?;

    std::fs::create_dir_all(&args.out).map_err(io_err)?;
    std::fs::write(args.out.join("trials.csv"), sim::trials_csv(&run)).map_err(io_err)?;
    std::fs::write(args.out.join("summary.json"), sim::summary_json(&run, &config))
        .map_err(io_err)?;
    println!(
        "{} trials ({} failed): MPE {:.3} cm, P90 {:.3} cm, MRE {:.4}°, R90 {:.4}°",
        config.trials,
        run.failed,
        run.stats.mpe_m * 100.0,
        run.stats.p90_m * 100.0,
        run.stats.mre_deg,
        run.stats.r90_deg
    );
    Ok(())
}

fn localize_error(e: FreePnpError) -> CliError {
    match e {
        FreePnpError::Db(DbError::UnknownId(id)) => fail(2, anyhow!("unknown LED id {id}")),
        FreePnpError::InsufficientObservations(n) => {
            fail(3, anyhow!("need at least 2 observations, got {n}"))
        }
        other => fail(4, other.into()),
    }
}

fn localize(args: LocalizeArgs) -> CliResult {
    let db = Database::load(&args.db).map_err(|e| match e {
        DbError::Io(io) => io_err(io),
        DbError::Malformed(m) => io_err(m),
        other => fail(6, other.into()),
    })?;
    let obs = ObservationSet::load(&args.obs).map_err(|e| match e {
        SceneError::Io(io) => io_err(io),
        SceneError::Malformed(m) => io_err(m),
        other => fail(6, other.into()),
    })?;
    // id resolution happens inside the pipeline, but surface unknown ids
    // with their dedicated exit code up front
    for o in &obs.observations {
        db.lookup(o.led_id)
            .map_err(|_| fail(2, anyhow!("observation references unknown LED id {}", o.led_id)))?;
    }
    if obs.observations.len() < 2 {
        return Err(fail(
            3,
            anyhow!("need at least 2 observations, got {}", obs.observations.len()),
        ));
    }
    let scene = obs.into_scene(db).map_err(|e| fail(6, e.into()))?;
    let init =
        freepnp(&scene, &lcvlp::freepnp::FreePnpConfig::default()).map_err(localize_error)?;
    let options = lcvlp::refine::RefineOptions::default();
    let outcome = refine(&init, &scene, &options).map_err(|e| match e {
        RefineError::Db(DbError::UnknownId(id)) => fail(2, anyhow!("unknown LED id {id}")),
        other => fail(4, other.into()),
    })?;

    let r = outcome.pose.rotation();
    let center = outcome.pose.camera_center();
    let doc = serde_json::json!({
        "position_m": [center.x, center.y, center.z],
        "rodrigues": [outcome.pose.omega.x, outcome.pose.omega.y, outcome.pose.omega.z],
        "rotation_matrix": [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        "diagnostics": outcome.diagnostics,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(io_err)? + "\n";
    std::fs::write(&args.out, text).map_err(io_err)?;
    println!(
        "position [{:.4}, {:.4}, {:.4}] m, {} iterations, final cost {:.3e}",
        center.x,
        center.y,
        center.z,
        outcome.diagnostics.iterations,
        outcome.diagnostics.final_cost
    );
    Ok(())
}

fn db_validate(args: DbValidateArgs) -> CliResult {
    let db = Database::load(&args.db).map_err(|e| match e {
        DbError::Io(io) => io_err(io),
        DbError::Malformed(m) => io_err(m),
        other => fail(6, other.into()),
    })?;
    println!(
        "ok: {} LEDs on ceiling plane z = {} m, {} reference points",
        db.len(),
        db.z0(),
        db.ref_points().len()
    );
    Ok(())
}

fn export_cdf(args: ExportCdfArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.trials).map_err(io_err)?;
    let out = sim::export_cdf(&text).map_err(|e| fail(1, e.into()))?;
    std::fs::write(&args.out, out).map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_fields() {
        let mut doc = serde_json::to_value(scenario_preset(Scenario::A)).unwrap();
        apply_override(&mut doc, "noise_std_px=0.5").unwrap();
        apply_override(&mut doc, "pose_sampler.max_tilt_rad=0.1").unwrap();
        apply_override(&mut doc, "leds.0.gamma=1.0").unwrap();
        let cfg: ScenarioConfig = serde_json::from_value(doc).unwrap();
        assert_eq!(cfg.noise_std_px, 0.5);
        assert_eq!(cfg.pose_sampler.max_tilt_rad, 0.1);
        assert_eq!(cfg.leds[0].gamma, 1.0);
    }

    #[test]
    fn override_rejects_unknown_path() {
        let mut doc = serde_json::to_value(scenario_preset(Scenario::A)).unwrap();
        assert!(apply_override(&mut doc, "nope.field=1").is_err());
        assert!(apply_override(&mut doc, "missing_equals").is_err());
    }
}
