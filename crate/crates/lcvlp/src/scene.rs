//! A localization instance: intrinsics, LED database, identified
//! contours, and optional reference points.
//!
//! Observations arrive as an `obs.json` document:
//!
//! ```json
//! {
//!   "intrinsics": {"fx": 800.0, "fy": 800.0, "u0": 320.0, "v0": 240.0,
//!                  "width": 640.0, "height": 480.0},
//!   "observations": [{"id": 1, "contour": [[410.2, 251.7], ...]}],
//!   "ref_points": [{"x": 2.15, "y": 2.0, "u": 340.0, "v": 250.0}]
//! }
//! ```

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::db::{Database, RefPoint};

/// Minimum number of contour points per observation.
pub const MIN_CONTOUR_POINTS: usize = 8;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("observation {id} has {got} contour points, need at least {MIN_CONTOUR_POINTS}")]
    ContourTooShort { id: u32, got: usize },
    #[error("observation {id} contour point {index} is outside the image")]
    ContourOutOfBounds { id: u32, index: usize },
    #[error("LED id {0} observed more than once")]
    DuplicateObservation(u32),
    #[error("invalid intrinsics: {0}")]
    Intrinsics(#[from] crate::camera::CameraError),
    #[error("malformed observation file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An identified LED contour: the broadcast id plus the extracted
/// boundary pixels in traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub led_id: u32,
    pub contour: Vec<Vector2<f64>>,
}

impl Observation {
    /// Check the contour-size and image-bounds invariants.
    pub fn validate(&self, k: &CameraIntrinsics) -> Result<(), SceneError> {
        if self.contour.len() < MIN_CONTOUR_POINTS {
            return Err(SceneError::ContourTooShort {
                id: self.led_id,
                got: self.contour.len(),
            });
        }
        for (i, p) in self.contour.iter().enumerate() {
            if !k.contains(p) {
                return Err(SceneError::ContourOutOfBounds { id: self.led_id, index: i });
            }
        }
        Ok(())
    }
}

/// One localization instance.
#[derive(Debug, Clone)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub database: Database,
    pub observations: Vec<Observation>,
    pub ref_points: Vec<RefPoint>,
}

impl Scene {
    pub fn new(
        intrinsics: CameraIntrinsics,
        database: Database,
        observations: Vec<Observation>,
    ) -> Self {
        let ref_points = database.ref_points().to_vec();
        Self { intrinsics, database, observations, ref_points }
    }

    /// Ceiling height of the scene's database, meters.
    pub fn z0(&self) -> f64 {
        self.database.z0()
    }

    /// Validate intrinsics, contour sizes, and id uniqueness.
    ///
    /// Image-bounds checks are not repeated here: extracted contours
    /// loaded from files are bounds-checked on load, while synthesized
    /// noisy contours may legitimately step outside the frame (noise is
    /// applied unclipped after the pre-noise visibility check).
    pub fn validate(&self) -> Result<(), SceneError> {
        self.intrinsics.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for obs in &self.observations {
            if obs.contour.len() < MIN_CONTOUR_POINTS {
                return Err(SceneError::ContourTooShort {
                    id: obs.led_id,
                    got: obs.contour.len(),
                });
            }
            if !seen.insert(obs.led_id) {
                return Err(SceneError::DuplicateObservation(obs.led_id));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ObsFile {
    intrinsics: CameraIntrinsics,
    observations: Vec<ObsEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ref_points: Vec<ObsRefPoint>,
}

#[derive(Serialize, Deserialize)]
struct ObsEntry {
    id: u32,
    contour: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct ObsRefPoint {
    x: f64,
    y: f64,
    u: f64,
    v: f64,
}

/// Parsed `obs.json`: intrinsics, contours, optional reference points
/// (pixels paired with on-ceiling world coordinates; the z comes from
/// whichever database the observation is matched against).
pub struct ObservationSet {
    pub intrinsics: CameraIntrinsics,
    pub observations: Vec<Observation>,
    /// (world x, world y, pixel) triples; lifted to z0 when combined
    /// with a database.
    pub ref_points: Vec<(f64, f64, Vector2<f64>)>,
}

impl ObservationSet {
    pub fn load(path: &std::path::Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let doc: ObsFile = serde_json::from_str(text)?;
        Ok(Self {
            intrinsics: doc.intrinsics,
            observations: doc
                .observations
                .into_iter()
                .map(|e| Observation {
                    led_id: e.id,
                    contour: e.contour.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
                })
                .collect(),
            ref_points: doc
                .ref_points
                .into_iter()
                .map(|e| (e.x, e.y, Vector2::new(e.u, e.v)))
                .collect(),
        })
    }

    /// Combine with a database into a validated scene. Reference points
    /// from the observation file are appended to any the database
    /// carries. Loaded contours must lie fully inside the image.
    pub fn into_scene(self, database: Database) -> Result<Scene, SceneError> {
        for obs in &self.observations {
            obs.validate(&self.intrinsics)?;
        }
        let z0 = database.z0();
        let mut scene = Scene::new(self.intrinsics, database, self.observations);
        scene.ref_points.extend(self.ref_points.iter().map(|&(x, y, pixel)| RefPoint {
            world: Vector3::new(x, y, z0),
            pixel,
        }));
        scene.validate()?;
        Ok(scene)
    }
}

/// Serialize observations to the `obs.json` format.
pub fn observations_to_json(
    intrinsics: &CameraIntrinsics,
    observations: &[Observation],
    ref_points: &[RefPoint],
) -> String {
    let doc = ObsFile {
        intrinsics: *intrinsics,
        observations: observations
            .iter()
            .map(|o| ObsEntry {
                id: o.led_id,
                contour: o.contour.iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
        ref_points: ref_points
            .iter()
            .map(|rp| ObsRefPoint { x: rp.world.x, y: rp.world.y, u: rp.pixel.x, v: rp.pixel.y })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("observation serialization")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::standard_layout;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    fn octagon(cx: f64, cy: f64) -> Vec<Vector2<f64>> {
        (0..8)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 8.0;
                Vector2::new(cx + 10.0 * t.cos(), cy + 10.0 * t.sin())
            })
            .collect()
    }

    #[test]
    fn validate_catches_short_and_out_of_bounds() {
        let obs = Observation { led_id: 1, contour: octagon(320.0, 240.0)[..5].to_vec() };
        assert!(matches!(
            obs.validate(&intr()),
            Err(SceneError::ContourTooShort { id: 1, got: 5 })
        ));
        let obs = Observation { led_id: 2, contour: octagon(635.0, 240.0) };
        assert!(matches!(
            obs.validate(&intr()),
            Err(SceneError::ContourOutOfBounds { id: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let db = standard_layout(|_| (0.15, 0.15, 2.0, 0.0)).unwrap();
        let scene = Scene::new(
            intr(),
            db,
            vec![
                Observation { led_id: 1, contour: octagon(100.0, 100.0) },
                Observation { led_id: 1, contour: octagon(300.0, 300.0) },
            ],
        );
        assert!(matches!(scene.validate(), Err(SceneError::DuplicateObservation(1))));
    }

    #[test]
    fn obs_json_round_trip() {
        let observations = vec![
            Observation { led_id: 1, contour: octagon(100.0, 100.0) },
            Observation { led_id: 3, contour: octagon(400.0, 300.0) },
        ];
        let json = observations_to_json(&intr(), &observations, &[]);
        let parsed = ObservationSet::from_json(&json).unwrap();
        assert_eq!(parsed.observations, observations);
        assert_eq!(parsed.intrinsics, intr());
        let db = standard_layout(|_| (0.15, 0.15, 2.0, 0.0)).unwrap();
        let scene = parsed.into_scene(db).unwrap();
        assert_eq!(scene.observations.len(), 2);
    }
}
