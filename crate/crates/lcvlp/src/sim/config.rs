//! Scenario configuration and the standard presets.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::db::{Database, DbError, LedRecord};
use crate::freepnp::FreePnpConfig;
use crate::lame::LameCurve;
use crate::refine::{Box3, RefineOptions};

/// One LED entry of a scenario, mirroring the `led-db.json` fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedSpec {
    pub id: u32,
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub phi: f64,
}

/// Camera pose distribution for trial synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    /// Camera height range, meters. The standard layout only admits
    /// low cameras: two LEDs 2 m apart both fit the frame only when the
    /// camera is ≳2.3 m below the ceiling.
    pub height_range: [f64; 2],
    /// Maximum tilt of the optical axis from vertical, radians.
    pub max_tilt_rad: f64,
    /// Roll range about the optical axis, radians.
    pub roll_range: [f64; 2],
    /// Inset of the sampled footprint from the room walls, meters.
    pub wall_inset_m: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            height_range: [0.1, 0.7],
            max_tilt_rad: 30.0_f64.to_radians(),
            roll_range: [0.0, std::f64::consts::TAU],
            wall_inset_m: 0.5,
        }
    }
}

/// Full Monte Carlo scenario description. Serializes as the `simulate`
/// command's config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Ceiling plane height, meters.
    pub z0: f64,
    /// LED database entries.
    pub leds: Vec<LedSpec>,
    /// Room bounds (also the default feasible region), meters.
    pub room: Box3,
    pub camera: CameraIntrinsics,
    /// Std of the white Gaussian pixel noise added to contour points.
    #[serde(default = "default_noise")]
    pub noise_std_px: f64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pose_sampler: PoseSampler,
    /// Contour points per pixel of projected arc length (floor 90).
    /// The default corresponds to dense sub-pixel contour extraction;
    /// sparser contours raise the error floor of the refinement.
    #[serde(default = "default_density")]
    pub contour_density_per_px: f64,
    #[serde(default = "default_min_visible")]
    pub min_visible_leds: usize,
    #[serde(default)]
    pub freepnp: FreePnpConfig,
    #[serde(default)]
    pub refine: RefineOptions,
    /// Carried through to outputs but not used by the geometry (e.g.
    /// luminaire semi-angle).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

fn default_noise() -> f64 {
    2.0
}
fn default_trials() -> u64 {
    2000
}
fn default_density() -> f64 {
    4.0
}
fn default_min_visible() -> usize {
    2
}

impl ScenarioConfig {
    /// Build the validated LED database for this scenario.
    pub fn database(&self) -> Result<Database, DbError> {
        let records = self
            .leds
            .iter()
            .map(|e| {
                LameCurve::new(e.cx, e.cy, self.z0, e.a, e.b, e.gamma, e.phi)
                    .map(|curve| LedRecord { id: e.id, curve })
                    .map_err(|source| DbError::InvalidCurve { id: e.id, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Database::build(records)
    }

    /// Scale every LED's semi-axes by `factor` (size sweeps).
    pub fn scale_leds(&mut self, factor: f64) {
        for led in &mut self.leds {
            led.a *= factor;
            led.b *= factor;
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}

/// The four homogeneous/heterogeneous scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Four circular LEDs, radius 0.15 m.
    A,
    /// Four rectangular LEDs (γ = 100), 0.15 × 0.12 m.
    B,
    /// Mixed order γ ∈ {1, 2}: alternating rhombi and ellipses,
    /// 0.15 × 0.12 m.
    C,
    /// Four different shapes: rhombus, ellipse, circle, rectangle.
    D,
}

/// Homogeneous single-shape presets for the shape-robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapePreset {
    Rhombus,
    Square,
    Ellipse,
    Circle,
    Rectangle,
}

/// (a, b, gamma) per shape. Square and circle reuse the scenario-A
/// axes; the elongated shapes use the scenario-B axes.
fn shape_params(shape: ShapePreset) -> (f64, f64, f64) {
    match shape {
        ShapePreset::Rhombus => (0.15, 0.12, 1.0),
        ShapePreset::Square => (0.15, 0.15, 1.0),
        ShapePreset::Ellipse => (0.15, 0.12, 2.0),
        ShapePreset::Circle => (0.15, 0.15, 2.0),
        ShapePreset::Rectangle => (0.15, 0.12, 100.0),
    }
}

/// The standard ceiling layout with a per-position shape assignment.
fn standard_config(shape_at: impl Fn(usize) -> (f64, f64, f64)) -> ScenarioConfig {
    let positions = [(2.0, 2.0), (2.0, 6.0), (4.0, 2.0), (4.0, 6.0)];
    let leds = positions
        .iter()
        .enumerate()
        .map(|(i, &(cx, cy))| {
            let (a, b, gamma) = shape_at(i);
            LedSpec { id: i as u32 + 1, cx, cy, a, b, gamma, phi: 0.0 }
        })
        .collect();
    let room = Box3::new(Vector3::zeros(), Vector3::new(6.0, 8.0, 3.0));
    let mut metadata = serde_json::Map::new();
    metadata.insert("led_semi_angle_deg".into(), serde_json::json!(60.0));
    ScenarioConfig {
        z0: 3.0,
        leds,
        room,
        camera: CameraIntrinsics {
            fx: 800.0,
            fy: 800.0,
            u0: 320.0,
            v0: 240.0,
            width: 640.0,
            height: 480.0,
        },
        noise_std_px: default_noise(),
        trials: default_trials(),
        seed: 0,
        pose_sampler: PoseSampler::default(),
        contour_density_per_px: default_density(),
        min_visible_leds: default_min_visible(),
        freepnp: FreePnpConfig::default(),
        refine: RefineOptions { feasible_region: room, ..Default::default() },
        metadata,
    }
}

pub fn scenario_preset(scenario: Scenario) -> ScenarioConfig {
    match scenario {
        Scenario::A => standard_config(|_| shape_params(ShapePreset::Circle)),
        Scenario::B => standard_config(|_| shape_params(ShapePreset::Rectangle)),
        Scenario::C => standard_config(|i| {
            if i % 2 == 0 {
                shape_params(ShapePreset::Rhombus)
            } else {
                shape_params(ShapePreset::Ellipse)
            }
        }),
        Scenario::D => standard_config(|i| match i {
            0 => shape_params(ShapePreset::Rhombus),
            1 => shape_params(ShapePreset::Ellipse),
            2 => shape_params(ShapePreset::Circle),
            _ => shape_params(ShapePreset::Rectangle),
        }),
    }
}

pub fn shape_preset(shape: ShapePreset) -> ScenarioConfig {
    standard_config(|_| shape_params(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_a_is_four_circles() {
        let cfg = scenario_preset(Scenario::A);
        assert_eq!(cfg.leds.len(), 4);
        for led in &cfg.leds {
            assert_eq!((led.a, led.b, led.gamma), (0.15, 0.15, 2.0));
        }
        assert_eq!(cfg.leds[0].cx, 2.0);
        assert_eq!(cfg.leds[3].cy, 6.0);
        assert!(cfg.database().is_ok());
    }

    #[test]
    fn preset_b_is_rectangular() {
        let cfg = scenario_preset(Scenario::B);
        for led in &cfg.leds {
            assert_eq!((led.a, led.b, led.gamma), (0.15, 0.12, 100.0));
        }
    }

    #[test]
    fn preset_d_has_four_distinct_shapes() {
        let cfg = scenario_preset(Scenario::D);
        let gammas: Vec<f64> = cfg.leds.iter().map(|l| l.gamma).collect();
        assert_eq!(gammas, vec![1.0, 2.0, 2.0, 100.0]);
        // ellipse and circle share γ=2 but differ in axes
        assert_ne!(cfg.leds[1].b, cfg.leds[2].b);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = scenario_preset(Scenario::C);
        let parsed = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn led_scale_applies_to_axes() {
        let mut cfg = scenario_preset(Scenario::A);
        cfg.scale_leds(1.0 / 3.0);
        assert!((cfg.leds[0].a - 0.05).abs() < 1e-12);
    }
}
