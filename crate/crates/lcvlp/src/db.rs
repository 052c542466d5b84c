//! LED parameter database: construction, validation, persistence, lookup.
//!
//! The on-disk format is a single JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "z0": 3.0,
//!   "leds": [{"id": 1, "cx": 2.0, "cy": 2.0, "a": 0.15, "b": 0.15,
//!             "gamma": 2.0, "phi": 0.0}],
//!   "ref_points": [{"x": 2.15, "y": 2.0, "u": 340.0, "v": 250.0}]
//! }
//! ```
//!
//! Units are meters, radians, and pixels. All LEDs share one ceiling
//! plane `z = z0`; the optional `ref_points` list carries pre-calibrated
//! world/pixel correspondences on that plane.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lame::{LameCurve, LameError};

/// Current schema version of `led-db.json`.
pub const DB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("database must contain at least one LED")]
    Empty,
    #[error("duplicate LED id {0}")]
    DuplicateId(u32),
    #[error("unknown LED id {0}")]
    UnknownId(u32),
    #[error("LED {id} has ceiling height {z0} but the database uses {expected}")]
    InconsistentCeiling { id: u32, z0: f64, expected: f64 },
    #[error("LED {id}: {source}")]
    InvalidCurve { id: u32, source: LameError },
    #[error("reference point ({x}, {y}) must lie on the ceiling plane z = {z0}")]
    RefPointOffPlane { x: f64, y: f64, z0: f64 },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed database file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One Lamé-curve LED with its broadcast identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LedRecord {
    pub id: u32,
    pub curve: LameCurve,
}

/// A pre-calibrated reference point: known world position on the ceiling
/// plane and its observed pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RefPoint {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

/// Validated, id-indexed LED store. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    z0: f64,
    records: BTreeMap<u32, LedRecord>,
    ref_points: Vec<RefPoint>,
}

impl Database {
    /// Validate and index a list of records. All curves must share one
    /// ceiling height and ids must be unique.
    pub fn build(records: Vec<LedRecord>) -> Result<Self, DbError> {
        Self::build_with_ref_points(records, Vec::new())
    }

    pub fn build_with_ref_points(
        records: Vec<LedRecord>,
        ref_points: Vec<RefPoint>,
    ) -> Result<Self, DbError> {
        let first = records.first().ok_or(DbError::Empty)?;
        let z0 = first.curve.z0;
        let mut map = BTreeMap::new();
        for rec in records {
            if rec.curve.z0 != z0 {
                return Err(DbError::InconsistentCeiling {
                    id: rec.id,
                    z0: rec.curve.z0,
                    expected: z0,
                });
            }
            // re-validate so hand-built curves cannot bypass invariants
            LameCurve::new(
                rec.curve.center_x,
                rec.curve.center_y,
                rec.curve.z0,
                rec.curve.a,
                rec.curve.b,
                rec.curve.gamma,
                rec.curve.phi,
            )
            .map_err(|source| DbError::InvalidCurve { id: rec.id, source })?;
            if map.insert(rec.id, rec.clone()).is_some() {
                return Err(DbError::DuplicateId(rec.id));
            }
        }
        for rp in &ref_points {
            if (rp.world.z - z0).abs() > 1e-9 {
                return Err(DbError::RefPointOffPlane {
                    x: rp.world.x,
                    y: rp.world.y,
                    z0,
                });
            }
        }
        Ok(Self { z0, records: map, ref_points })
    }

    /// Ceiling plane height shared by all LEDs, meters.
    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, id: u32) -> Result<&LedRecord, DbError> {
        self.records.get(&id).ok_or(DbError::UnknownId(id))
    }

    pub fn records(&self) -> impl Iterator<Item = &LedRecord> {
        self.records.values()
    }

    pub fn ref_points(&self) -> &[RefPoint] {
        &self.ref_points
    }

    pub fn save(&self, path: &Path) -> Result<(), DbError> {
        let doc = DbFile::from(self);
        let json = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DbError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, DbError> {
        let doc: DbFile = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DbFile::from(self)).expect("database serialization")
    }
}

#[derive(Serialize, Deserialize)]
struct DbFile {
    version: u32,
    z0: f64,
    leds: Vec<LedEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ref_points: Vec<RefPointEntry>,
}

#[derive(Serialize, Deserialize)]
struct LedEntry {
    id: u32,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    gamma: f64,
    phi: f64,
}

#[derive(Serialize, Deserialize)]
struct RefPointEntry {
    x: f64,
    y: f64,
    u: f64,
    v: f64,
}

impl From<&Database> for DbFile {
    fn from(db: &Database) -> Self {
        Self {
            version: DB_SCHEMA_VERSION,
            z0: db.z0,
            leds: db
                .records
                .values()
                .map(|r| LedEntry {
                    id: r.id,
                    cx: r.curve.center_x,
                    cy: r.curve.center_y,
                    a: r.curve.a,
                    b: r.curve.b,
                    gamma: r.curve.gamma,
                    phi: r.curve.phi,
                })
                .collect(),
            ref_points: db
                .ref_points
                .iter()
                .map(|rp| RefPointEntry {
                    x: rp.world.x,
                    y: rp.world.y,
                    u: rp.pixel.x,
                    v: rp.pixel.y,
                })
                .collect(),
        }
    }
}

impl TryFrom<DbFile> for Database {
    type Error = DbError;

    fn try_from(doc: DbFile) -> Result<Self, DbError> {
        if doc.version != DB_SCHEMA_VERSION {
            return Err(DbError::SchemaVersion {
                found: doc.version,
                expected: DB_SCHEMA_VERSION,
            });
        }
        let records = doc
            .leds
            .iter()
            .map(|e| {
                LameCurve::new(e.cx, e.cy, doc.z0, e.a, e.b, e.gamma, e.phi)
                    .map(|curve| LedRecord { id: e.id, curve })
                    .map_err(|source| DbError::InvalidCurve { id: e.id, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ref_points = doc
            .ref_points
            .iter()
            .map(|e| RefPoint {
                world: Vector3::new(e.x, e.y, doc.z0),
                pixel: Vector2::new(e.u, e.v),
            })
            .collect();
        Database::build_with_ref_points(records, ref_points)
    }
}

/// The four-LED ceiling layout used throughout the simulations:
/// ids 1-4 at (2,2), (2,6), (4,2), (4,6) on a 3 m ceiling.
pub fn standard_layout(
    shape: impl Fn(usize) -> (f64, f64, f64, f64),
) -> Result<Database, DbError> {
    let positions = [(2.0, 2.0), (2.0, 6.0), (4.0, 2.0), (4.0, 6.0)];
    let records = positions
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let (a, b, gamma, phi) = shape(i);
            LameCurve::new(x, y, 3.0, a, b, gamma, phi)
                .map(|curve| LedRecord { id: i as u32 + 1, curve })
                .map_err(|source| DbError::InvalidCurve { id: i as u32 + 1, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Database::build(records)
}
