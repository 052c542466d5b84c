// temporary pre-check binary (not committed)
use lcvlp::sim::*;

fn run(name: &str, cfg: &ScenarioConfig) {
    let t0 = std::time::Instant::now();
    match run_monte_carlo(cfg) {
        Ok(run) => println!(
            "{name}: mpe={:.2}cm p50={:.2} p90={:.2} std={:.2} | mre={:.3} r50={:.3} r90={:.3} | fail={} | {:.1?}",
            run.stats.mpe_m * 100.0, run.stats.p50_m * 100.0, run.stats.p90_m * 100.0, run.stats.std_m * 100.0,
            run.stats.mre_deg, run.stats.r50_deg, run.stats.r90_deg, run.failed, t0.elapsed()
        ),
        Err(e) => println!("{name}: ERROR {e}"),
    }
}

fn main() {
    let trials = 2000;
    for (s, name) in [(Scenario::A, "A"), (Scenario::B, "B"), (Scenario::D, "D")] {
        let mut cfg = scenario_preset(s);
        cfg.trials = trials;
        cfg.seed = 42;
        run(name, &cfg);
    }
    for (s, name) in [
        (ShapePreset::Rhombus, "rhombus"),
        (ShapePreset::Square, "square"),
        (ShapePreset::Ellipse, "ellipse"),
        (ShapePreset::Circle, "circle"),
        (ShapePreset::Rectangle, "rectangle"),
    ] {
        let mut cfg = shape_preset(s);
        cfg.trials = trials;
        cfg.seed = 42;
        run(name, &cfg);
    }
    // radius sweep on A
    for r in [0.05, 0.10, 0.15, 0.20] {
        let mut cfg = scenario_preset(Scenario::A);
        cfg.trials = trials;
        cfg.seed = 42;
        cfg.scale_leds(r / 0.15);
        run(&format!("radius {r}"), &cfg);
    }
    // noise sweep on A
    for s in [0.0, 1.0, 2.0, 3.0, 4.0] {
        let mut cfg = scenario_preset(Scenario::A);
        cfg.trials = trials;
        cfg.seed = 42;
        cfg.noise_std_px = s;
        run(&format!("sigma {s}"), &cfg);
    }
}
