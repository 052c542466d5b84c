//! Camera pose estimation from Lamé-curve LED contours.
//!
//! Ceiling luminaires are modeled as Lamé curves (superellipses)
//! broadcasting their identities over visible light. Given the camera
//! intrinsics, an LED parameter database, and the identified contour
//! point sets extracted from one image, the library estimates the full
//! 6-DoF camera pose in two stages:
//!
//! 1. **Initialization** ([`freepnp`]) — approximate virtual 3D–2D
//!    correspondences are built from the contours without pre-calibrated
//!    reference points (collinearity pins a start point per LED, uniform
//!    sampling does the rest) and fed to a planar PnP solve.
//! 2. **Refinement** ([`refine`]) — every retained contour pixel is
//!    back-projected onto the ceiling plane and the normalized algebraic
//!    distances to the LED curves are minimized over the Rodrigues-vector
//!    pose with damped Gauss–Newton, noise-bias corrections, and
//!    feasible-region handling.
//!
//! The [`sim`] module adds a deterministic Monte Carlo harness (scene
//! synthesis, scenario presets, error statistics) used to characterize
//! accuracy; trials parallelize with rayon behind the default `parallel`
//! feature and produce identical output sequentially.

pub use nalgebra;

pub mod camera;
pub mod db;
pub mod freepnp;
pub mod lame;
pub mod refine;
pub mod scene;
pub mod sim;

pub use camera::{CameraIntrinsics, Pose};
pub use db::{Database, LedRecord, RefPoint};
pub use freepnp::{freepnp, FreePnpConfig};
pub use lame::LameCurve;
pub use refine::{refine, RefineOptions};
pub use scene::{Observation, Scene};
