//! Acceptance suite: the statistical and structural requirements the
//! artifact must meet, one test per criterion. Each prints a PASS/FAIL
//! line with the measured values. Statistical criteria run 2000-trial
//! Monte Carlo ensembles and take a few minutes each on a small box;
//! the suite as a whole is intended to run under
//! `cargo test -p lcvlp-cli --test acceptance`.

use std::process::Command;
use std::time::Instant;

use lcvlp::camera::{
    back_project_to_plane, project, rodrigues_to_matrix, CameraIntrinsics, Pose,
};
use lcvlp::lame::LameCurve;
use lcvlp::nalgebra::{Matrix3, Vector2, Vector3};
use lcvlp::refine::{jacobian, residuals, RefineOptions};
use lcvlp::sim::{
    run_monte_carlo, scenario_preset, shape_preset, MonteCarloRun, Scenario, ScenarioConfig,
    ShapePreset, TrialStatus,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const TRIALS: u64 = 2000;
const SEED: u64 = 42;

// Statistical bands, centimeters and degrees.
const A_MPE_CM: (f64, f64) = (1.5, 3.5);
const A_MRE_DEG: (f64, f64) = (0.15, 0.50);
const B_MPE_CM: (f64, f64) = (1.8, 4.2);
const B_MRE_DEG: (f64, f64) = (0.18, 0.60);
const D_MPE_CM: (f64, f64) = (1.9, 4.3);
const D_MRE_DEG: (f64, f64) = (0.20, 0.60);
const SHAPE_MPE_MAX_CM: f64 = 4.5;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn standard_run(config: &ScenarioConfig) -> MonteCarloRun {
    run_monte_carlo(config).expect("scenario feasible")
}

fn preset(scenario: Scenario) -> ScenarioConfig {
    let mut cfg = scenario_preset(scenario);
    cfg.trials = TRIALS;
    cfg.seed = SEED;
    cfg
}

#[test]
fn criterion_1_scenario_a_reproduction() {
    // through the CLI, as deployed
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_lcvlp"))
        .args([
            "simulate",
            "--scenario",
            "A",
            "--trials",
            "2000",
            "--seed",
            "42",
            "--noise-std",
            "2",
            "--out",
        ])
        .arg(dir.path())
        .status()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    let mpe_cm = summary["stats"]["mpe_m"].as_f64().unwrap() * 100.0;
    let mre = summary["stats"]["mre_deg"].as_f64().unwrap();
    let pass = (A_MPE_CM.0..=A_MPE_CM.1).contains(&mpe_cm)
        && (A_MRE_DEG.0..=A_MRE_DEG.1).contains(&mre)
        && elapsed.as_secs() < 600;
    report(
        "1 (scenario A)",
        pass,
        &format!(
            "MPE {mpe_cm:.2} cm (band {A_MPE_CM:?}), MRE {mre:.3}° (band {A_MRE_DEG:?}), runtime {elapsed:.0?}"
        ),
    );
}

#[test]
fn criterion_2_scenario_b_reproduction() {
    let run = standard_run(&preset(Scenario::B));
    let mpe_cm = run.stats.mpe_m * 100.0;
    let mre = run.stats.mre_deg;
    let pass =
        (B_MPE_CM.0..=B_MPE_CM.1).contains(&mpe_cm) && (B_MRE_DEG.0..=B_MRE_DEG.1).contains(&mre);
    report(
        "2 (scenario B)",
        pass,
        &format!("MPE {mpe_cm:.2} cm (band {B_MPE_CM:?}), MRE {mre:.3}° (band {B_MRE_DEG:?})"),
    );
}

#[test]
fn criterion_3_scenario_d_heterogeneous() {
    // the heterogeneous scenario runs through the same entry point as
    // every other config — the shape mix lives entirely in the database
    let run = standard_run(&preset(Scenario::D));
    let mpe_cm = run.stats.mpe_m * 100.0;
    let mre = run.stats.mre_deg;
    let pass =
        (D_MPE_CM.0..=D_MPE_CM.1).contains(&mpe_cm) && (D_MRE_DEG.0..=D_MRE_DEG.1).contains(&mre);
    report(
        "3 (scenario D)",
        pass,
        &format!("MPE {mpe_cm:.2} cm (band {D_MPE_CM:?}), MRE {mre:.3}° (band {D_MRE_DEG:?})"),
    );
}

#[test]
fn criterion_4_shape_robustness() {
    let mut detail = String::new();
    let mut pass = true;
    for (shape, name) in [
        (ShapePreset::Rhombus, "rhombus"),
        (ShapePreset::Square, "square"),
        (ShapePreset::Ellipse, "ellipse"),
        (ShapePreset::Circle, "circle"),
        (ShapePreset::Rectangle, "rectangle"),
    ] {
        let mut cfg = shape_preset(shape);
        cfg.trials = TRIALS;
        cfg.seed = SEED;
        let run = standard_run(&cfg);
        let mpe_cm = run.stats.mpe_m * 100.0;
        pass &= mpe_cm < SHAPE_MPE_MAX_CM;
        detail.push_str(&format!("{name} {mpe_cm:.2} cm; "));
    }
    report(
        "4 (shape robustness)",
        pass,
        &format!("{detail}bound {SHAPE_MPE_MAX_CM} cm"),
    );
}

#[test]
fn criterion_5_exact_recovery() {
    let mut cfg = preset(Scenario::A);
    cfg.trials = 200;
    cfg.noise_std_px = 0.0;
    let run = standard_run(&cfg);
    let good = run
        .trials
        .iter()
        .filter(|t| {
            t.status == TrialStatus::Ok
                && t.ep_m.unwrap_or(f64::INFINITY) < 1e-4
                && t.er_deg.unwrap_or(f64::INFINITY) < 1e-4
        })
        .count();
    let pass = good * 100 >= run.trials.len() * 99;
    report(
        "5 (exact recovery)",
        pass,
        &format!("{good}/{} scenes below 1e-4 m and 1e-4°", run.trials.len()),
    );
}

/// Non-monotonicity count for a sequence expected to be non-increasing.
fn inversions_decreasing(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[test]
fn criterion_6_monotone_trends() {
    let mut mpe_by_radius = Vec::new();
    let mut mre_by_radius = Vec::new();
    for radius in [0.05, 0.10, 0.15, 0.20] {
        let mut cfg = preset(Scenario::A);
        cfg.scale_leds(radius / 0.15);
        let run = standard_run(&cfg);
        mpe_by_radius.push(run.stats.mpe_m);
        mre_by_radius.push(run.stats.mre_deg);
    }
    let mut mpe_by_noise = Vec::new();
    let mut mre_by_noise = Vec::new();
    for sigma in [0.0, 1.0, 2.0, 3.0, 4.0] {
        let mut cfg = preset(Scenario::A);
        cfg.noise_std_px = sigma;
        let run = standard_run(&cfg);
        mpe_by_noise.push(run.stats.mpe_m);
        mre_by_noise.push(run.stats.mre_deg);
    }
    // errors shrink with LED size and grow with noise
    let inv_radius =
        inversions_decreasing(&mpe_by_radius).max(inversions_decreasing(&mre_by_radius));
    let rev_mpe: Vec<f64> = mpe_by_noise.iter().rev().copied().collect();
    let rev_mre: Vec<f64> = mre_by_noise.iter().rev().copied().collect();
    let inv_noise = inversions_decreasing(&rev_mpe).max(inversions_decreasing(&rev_mre));
    let pass = inv_radius <= 1 && inv_noise <= 1;
    report(
        "6 (monotone trends)",
        pass,
        &format!(
            "MPE vs radius {:?} cm ({} inversions), MPE vs σ {:?} cm ({} inversions)",
            mpe_by_radius.iter().map(|v| (v * 1e4).round() / 100.0).collect::<Vec<_>>(),
            inv_radius,
            mpe_by_noise.iter().map(|v| (v * 1e4).round() / 100.0).collect::<Vec<_>>(),
            inv_noise
        ),
    );
}

fn table_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640.0, 480.0).unwrap()
}

fn random_pose(rng: &mut StdRng) -> Pose {
    let tilt_axis = rng.gen_range(0.0..std::f64::consts::TAU);
    let tilt = rng.gen_range(0.0..0.5);
    let roll = rng.gen_range(0.0..std::f64::consts::TAU);
    let a = rodrigues_to_matrix(&(Vector3::new(tilt_axis.cos(), tilt_axis.sin(), 0.0) * tilt))
        * rodrigues_to_matrix(&Vector3::new(0.0, 0.0, roll));
    let r = a.transpose();
    let c = Vector3::new(rng.gen_range(0.5..5.5), rng.gen_range(0.5..7.5), rng.gen_range(0.1..1.5));
    Pose::from_matrix(&r, -(r * c)).unwrap()
}

fn normalized_det(p1: &Vector2<f64>, p2: &Vector2<f64>, p3: &Vector2<f64>) -> f64 {
    let det = Matrix3::new(p1.x, p2.x, p3.x, p1.y, p2.y, p3.y, 1.0, 1.0, 1.0).determinant();
    let d = (p2 - p1).norm().max((p3 - p1).norm()).max((p3 - p2).norm());
    det.abs() / d.max(1e-12).powi(2)
}

#[test]
fn criterion_7_collinearity_invariance() {
    let k = table_intrinsics();
    let z0 = 3.0;
    let mut rng = StdRng::seed_from_u64(1001);
    let mut worst_fwd = 0.0_f64;
    let mut worst_rev = 0.0_f64;
    let mut checked = 0;
    while checked < 1000 {
        let pose = random_pose(&mut rng);
        let a = Vector3::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..8.0), z0);
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let dir = Vector3::new(t.cos(), t.sin(), 0.0);
        let b = a + dir * rng.gen_range(0.1..1.0);
        let c = a + dir * rng.gen_range(1.0..2.0);
        let (Ok(pa), Ok(pb), Ok(pc)) =
            (project(&k, &pose, &a), project(&k, &pose, &b), project(&k, &pose, &c))
        else {
            continue;
        };
        worst_fwd = worst_fwd.max(normalized_det(&pa, &pb, &pc));

        let q1 = Vector2::new(rng.gen_range(10.0..630.0), rng.gen_range(10.0..470.0));
        let d2 = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if d2.norm() < 0.1 {
            continue;
        }
        let q2 = q1 + d2 * 60.0;
        let q3 = q1 + d2 * 150.0;
        let (Ok(w1), Ok(w2), Ok(w3)) = (
            back_project_to_plane(&k, &pose, &q1, z0),
            back_project_to_plane(&k, &pose, &q2, z0),
            back_project_to_plane(&k, &pose, &q3, z0),
        ) else {
            continue;
        };
        worst_rev = worst_rev.max(normalized_det(&w1.xy(), &w2.xy(), &w3.xy()));
        checked += 1;
    }
    let pass = worst_fwd < 1e-6 && worst_rev < 1e-6;
    report(
        "7 (collinearity invariance)",
        pass,
        &format!("1000 configurations, worst normalized det {worst_fwd:.2e} forward / {worst_rev:.2e} reverse"),
    );
}

#[test]
fn criterion_8_projected_arc_speed_bound() {
    let k = table_intrinsics();
    let omega_fov = k.fov_bound();
    let f = k.fx.max(k.fy);
    let mut rng = StdRng::seed_from_u64(2002);
    let mut worst_ratio = 0.0_f64;
    let mut checked = 0;
    while checked < 1000 {
        let pose = random_pose(&mut rng);
        let curve = LameCurve::new(
            rng.gen_range(1.0..5.0),
            rng.gen_range(1.0..7.0),
            3.0,
            rng.gen_range(0.05..0.3),
            rng.gen_range(0.05..0.3),
            rng.gen_range(1.0..100.0),
            rng.gen_range(0.0..std::f64::consts::TAU),
        )
        .unwrap();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let world = curve.point_at(curve.phi + theta);
        let cam = pose.rotation() * world + pose.t;
        if cam.z <= 0.05 {
            continue;
        }
        let Ok(pix) = project(&k, &pose, &world) else { continue };
        if !k.contains(&pix) {
            continue;
        }
        let h = 1e-6;
        let (Ok(p1), Ok(p2)) = (
            project(&k, &pose, &curve.point_at(curve.phi + theta + h)),
            project(&k, &pose, &curve.point_at(curve.phi + theta - h)),
        ) else {
            continue;
        };
        let ds_dtheta = (p1 - p2).norm() / (2.0 * h);
        let bound = f / cam.z * omega_fov * curve.arc_length_differential(theta);
        worst_ratio = worst_ratio.max(ds_dtheta / bound);
        checked += 1;
    }
    let pass = worst_ratio <= 1.0 + 1e-3;
    report(
        "8 (arc-speed bound)",
        pass,
        &format!("1000 samples, worst ds/dθ over bound ratio {worst_ratio:.6}"),
    );
}

#[test]
fn criterion_9_jacobian_correctness() {
    use lcvlp::db::standard_layout;
    use lcvlp::scene::{Observation, Scene};

    let db = standard_layout(|i| (0.15, 0.12, [1.0, 2.0, 2.0, 100.0][i], 0.3)).unwrap();
    let k = table_intrinsics();
    let opts = RefineOptions { sampling_ratio: 0.25, ..Default::default() };
    let mut rng = StdRng::seed_from_u64(3003);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let truth = {
            let tilt_axis = rng.gen_range(0.0..std::f64::consts::TAU);
            let tilt = rng.gen_range(0.0..0.08);
            let roll = rng.gen_range(0.3..0.5);
            let a = rodrigues_to_matrix(
                &(Vector3::new(tilt_axis.cos(), tilt_axis.sin(), 0.0) * tilt),
            ) * rodrigues_to_matrix(&Vector3::new(0.0, 0.0, roll));
            let r = a.transpose();
            let c = Vector3::new(
                3.0 + rng.gen_range(-0.1..0.1),
                2.0 + rng.gen_range(-0.1..0.1),
                rng.gen_range(0.1..0.3),
            );
            Pose::from_matrix(&r, -(r * c)).unwrap()
        };
        let r = truth.rotation();
        let obs: Vec<Observation> = [1_u32, 3]
            .iter()
            .map(|&id| {
                let curve = db.lookup(id).unwrap().curve;
                let contour = (0..64)
                    .map(|j| {
                        let p = curve.point_at(curve.phi + j as f64 * std::f64::consts::TAU / 64.0);
                        lcvlp::camera::project_with_rotation(&k, &r, &truth.t, &p).unwrap()
                    })
                    .collect();
                Observation { led_id: id, contour }
            })
            .collect();
        let scene = Scene::new(k, db.clone(), obs);
        let pose = Pose::new(
            truth.omega
                + Vector3::new(
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                ),
            truth.t
                + Vector3::new(
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                ),
        );
        let jac = jacobian(&pose, &scene, &opts).unwrap();
        let h = 1e-6;
        let mut params = [pose.omega.x, pose.omega.y, pose.omega.z, pose.t.x, pose.t.y, pose.t.z];
        for j in 0..6 {
            let orig = params[j];
            params[j] = orig + h;
            let rp = residuals(&pose_from(&params), &scene, &opts).unwrap();
            params[j] = orig - h;
            let rm = residuals(&pose_from(&params), &scene, &opts).unwrap();
            params[j] = orig;
            for (i, (p, m)) in rp.iter().zip(rm.iter()).enumerate() {
                let fd = (p - m) / (2.0 * h);
                let a = jac[(i, j)];
                let tol = (1e-3 * a.abs()).max(1e-5);
                let excess = (fd - a).abs() / tol;
                worst = worst.max(excess);
            }
        }
    }
    let pass = worst <= 1.0;
    report(
        "9 (jacobian correctness)",
        pass,
        &format!("100 poses, worst |fd − analytic| at {worst:.3}× its tolerance"),
    );
}

fn pose_from(p: &[f64; 6]) -> Pose {
    Pose::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5]))
}

#[test]
fn criterion_10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, workers: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_lcvlp"))
            .args([
                "simulate",
                "--scenario",
                "D",
                "--trials",
                "150",
                "--seed",
                "9",
                "--workers",
                workers,
                "--out",
            ])
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
        (
            std::fs::read(dir.path().join(out).join("trials.csv")).unwrap(),
            std::fs::read(dir.path().join(out).join("summary.json")).unwrap(),
        )
    };
    let (t1, s1) = run("a", "1");
    let (t2, s2) = run("b", "1");
    let (t3, s3) = run("c", "2");
    let (t4, s4) = run("d", "4");
    let pass = t1 == t2 && t2 == t3 && t3 == t4 && s1 == s2 && s2 == s3 && s3 == s4;
    report(
        "10 (determinism)",
        pass,
        "trials.csv and summary.json byte-identical across repeats and worker counts",
    );
}
