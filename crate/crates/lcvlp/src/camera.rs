//! Pinhole camera model: intrinsics, Rodrigues-vector pose, projection,
//! and plane-constrained back-projection.
//!
//! Conventions follow the usual world→camera extrinsics `x_c = R x + t`
//! with the camera center at `c = -Rᵀ t`. The pixel frame satisfies
//! `z_c · (u, v, 1)ᵀ = K x_c` with `K = [[fx, 0, u0], [0, fy, v0], [0, 0, 1]]`.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum depth (meters) for a point to count as in front of the camera.
pub const DEPTH_EPS: f64 = 1e-9;

/// Minimum |r3·d| for a pixel ray to intersect the ceiling plane.
pub const RAY_PLANE_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point is behind the camera (depth {0:.3e} m)")]
    BehindCamera(f64),
    #[error("pixel ray is parallel to the ceiling plane")]
    RayParallelToPlane,
    #[error("back-projected depth is not positive (depth {0:.3e} m)")]
    NegativeDepth(f64),
    #[error("matrix is not a rotation (orthonormality residual {0:.3e})")]
    NotARotation(f64),
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length along u, pixels.
    pub fx: f64,
    /// Focal length along v, pixels.
    pub fy: f64,
    /// Principal point u coordinate, pixels.
    pub u0: f64,
    /// Principal point v coordinate, pixels.
    pub v0: f64,
    /// Image width, pixels.
    pub width: f64,
    /// Image height, pixels.
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64, width: f64, height: f64) -> Result<Self, CameraError> {
        let k = Self { fx, fy, u0, v0, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.u0 > 0.0 && self.u0 < self.width && self.v0 > 0.0 && self.v0 < self.height) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside image {}x{}",
                self.u0, self.v0, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.u0, 0.0, self.fy, self.v0, 0.0, 0.0, 1.0)
    }

    /// Unit-depth ray direction `K⁻¹ (u, v, 1)ᵀ` in the camera frame.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.u0) / self.fx, (pixel.y - self.v0) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.x < self.width && pixel.y >= 0.0 && pixel.y < self.height
    }

    /// Field-of-view bound `Ω = sqrt(1 + tan²αx + tan²αy)` with the
    /// half-angles taken from half the image size over the focal length.
    /// Always `>= 1`; bounds the projected-arc speed (see the projective
    /// property tests).
    pub fn fov_bound(&self) -> f64 {
        let tx = 0.5 * self.width / self.fx;
        let ty = 0.5 * self.height / self.fy;
        (1.0 + tx * tx + ty * ty).sqrt()
    }
}

/// Camera extrinsics as a Rodrigues rotation vector plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Rodrigues vector `ω = angle · axis`, radians.
    pub omega: Vector3<f64>,
    /// Translation of the world→camera transform, meters.
    pub t: Vector3<f64>,
}

/// Rotation matrix from a Rodrigues vector:
/// `R = I + sin‖ω‖·[n]× + (1 − cos‖ω‖)·[n]×²` with `n = ω/‖ω‖`.
///
/// A second-order series is used below `‖ω‖ = 1e-8` where the unit axis
/// is ill-conditioned.
pub fn rodrigues_to_matrix(omega: &Vector3<f64>) -> Matrix3<f64> {
    let angle = omega.norm();
    let skew = skew_symmetric(omega);
    if angle < 1e-8 {
        return Matrix3::identity() + skew + 0.5 * skew * skew;
    }
    let n_skew = skew / angle;
    Matrix3::identity() + angle.sin() * n_skew + (1.0 - angle.cos()) * (n_skew * n_skew)
}

/// Inverse of [`rodrigues_to_matrix`]; returns `ω` with `‖ω‖ ∈ [0, π]`.
///
/// Goes through a unit quaternion, which stays well-conditioned near the
/// π-rotation branch where the direct trace formula loses the axis.
pub fn matrix_to_rodrigues(r: &Matrix3<f64>) -> Result<Vector3<f64>, CameraError> {
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    let det = r.determinant();
    if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 {
        return Err(CameraError::NotARotation(ortho.max((det - 1.0).abs())));
    }
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    Ok(q.scaled_axis())
}

pub fn skew_symmetric(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3): the first-order sensitivity of the Rodrigues
/// map, `R(ω + δ) ≈ exp([J_l(ω)·δ]×)·R(ω)`. Series-expanded near zero.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-5 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let w = skew_symmetric(omega);
    Matrix3::identity() + a * w + b * (w * w)
}

impl Pose {
    pub fn new(omega: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { omega, t }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Result<Self, CameraError> {
        Ok(Self::new(matrix_to_rodrigues(r)?, t))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rodrigues_to_matrix(&self.omega)
    }

    /// Camera center in world coordinates, `c = -Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        let r = self.rotation();
        -(r.transpose() * self.t)
    }

    /// Wrap the Rodrigues vector to `‖ω‖ <= π` (same rotation).
    pub fn canonicalized(&self) -> Self {
        let angle = self.omega.norm();
        if angle <= std::f64::consts::PI {
            return *self;
        }
        let wrapped = angle.rem_euclid(std::f64::consts::TAU);
        let wrapped = if wrapped > std::f64::consts::PI {
            wrapped - std::f64::consts::TAU
        } else {
            wrapped
        };
        Self::new(self.omega * (wrapped / angle), self.t)
    }
}

/// Project a world point to pixel coordinates.
pub fn project(
    k: &CameraIntrinsics,
    pose: &Pose,
    world: &Vector3<f64>,
) -> Result<Vector2<f64>, CameraError> {
    project_with_rotation(k, &pose.rotation(), &pose.t, world)
}

/// Projection with a precomputed rotation matrix (hot loops).
pub fn project_with_rotation(
    k: &CameraIntrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    world: &Vector3<f64>,
) -> Result<Vector2<f64>, CameraError> {
    let xc = r * world + t;
    if xc.z <= DEPTH_EPS {
        return Err(CameraError::BehindCamera(xc.z));
    }
    Ok(Vector2::new(
        k.fx * xc.x / xc.z + k.u0,
        k.fy * xc.y / xc.z + k.v0,
    ))
}

/// Back-project a pixel onto the plane `z = z0`.
///
/// The depth solves `r3ᵀ(z_c·d - t) = z0` with `d = K⁻¹(u, v, 1)ᵀ`; the
/// returned point has its z coordinate set to `z0` exactly. Rays parallel
/// to the plane and non-positive depths are reported as distinct errors.
pub fn back_project_to_plane(
    k: &CameraIntrinsics,
    pose: &Pose,
    pixel: &Vector2<f64>,
    z0: f64,
) -> Result<Vector3<f64>, CameraError> {
    let r = pose.rotation();
    back_project_with_rotation(k, &r, &pose.t, pixel, z0)
}

/// Back-projection with a precomputed rotation matrix (hot loops).
pub fn back_project_with_rotation(
    k: &CameraIntrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    pixel: &Vector2<f64>,
    z0: f64,
) -> Result<Vector3<f64>, CameraError> {
    let d = k.ray_direction(pixel);
    let r3 = r.column(2);
    let denom = r3.dot(&d);
    if denom.abs() <= RAY_PLANE_EPS {
        return Err(CameraError::RayParallelToPlane);
    }
    let depth = (z0 + r3.dot(t)) / denom;
    if depth <= DEPTH_EPS {
        return Err(CameraError::NegativeDepth(depth));
    }
    let world = r.transpose() * (depth * d - t);
    Ok(Vector3::new(world.x, world.y, z0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    pub(crate) fn table_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    fn random_rotation(rng: &mut StdRng) -> Matrix3<f64> {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        ));
        q.to_rotation_matrix().into_inner()
    }

    #[test]
    fn rodrigues_identity_and_quarter_turn() {
        assert_eq!(rodrigues_to_matrix(&Vector3::zeros()), Matrix3::identity());
        let r = rodrigues_to_matrix(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn rodrigues_produces_rotations() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let omega = Vector3::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            );
            let r = rodrigues_to_matrix(&omega);
            let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
            assert!(ortho < 1e-12, "orthonormality {ortho}");
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_to_rodrigues_trivial_cases() {
        assert_eq!(
            matrix_to_rodrigues(&Matrix3::identity()).unwrap(),
            Vector3::zeros()
        );
        let quarter = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let omega = matrix_to_rodrigues(&quarter).unwrap();
        assert_relative_eq!(omega, Vector3::new(0.0, 0.0, FRAC_PI_2), epsilon = 1e-12);
    }

    #[test]
    fn matrix_to_rodrigues_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            matrix_to_rodrigues(&m),
            Err(CameraError::NotARotation(_))
        ));
    }

    #[test]
    fn rodrigues_round_trip_random() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let omega = matrix_to_rodrigues(&r).unwrap();
            assert!(omega.norm() <= PI + 1e-12);
            let back = rodrigues_to_matrix(&omega);
            let err = (back - r).abs().max();
            assert!(err < 1e-9, "round trip error {err}");
        }
    }

    #[test]
    fn rodrigues_round_trip_small_and_near_pi() {
        for scale in [1e-12, 1e-9, 1e-7, PI - 1e-7, PI - 1e-10] {
            let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
            let omega = axis * scale;
            let r = rodrigues_to_matrix(&omega);
            let back = rodrigues_to_matrix(&matrix_to_rodrigues(&r).unwrap());
            assert!((back - r).abs().max() < 1e-9);
        }
    }

    #[test]
    fn project_table_camera() {
        let k = table_intrinsics();
        let pose = Pose::identity();
        let center = project(&k, &pose, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(center, Vector2::new(320.0, 240.0), epsilon = 1e-12);
        let off = project(&k, &pose, &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(off, Vector2::new(400.0, 240.0), epsilon = 1e-12);
        assert!(matches!(
            project(&k, &pose, &Vector3::new(0.0, 0.0, -1.0)),
            Err(CameraError::BehindCamera(_))
        ));
    }

    #[test]
    fn camera_center_cases() {
        assert_eq!(Pose::identity().camera_center(), Vector3::zeros());
        let p = Pose::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(p.camera_center(), Vector3::new(-1.0, -2.0, -3.0), epsilon = 1e-12);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let t = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let pose = Pose::from_matrix(&r, t).unwrap();
            let c = pose.camera_center();
            assert!((pose.rotation() * c + pose.t).norm() < 1e-9);
        }
    }

    #[test]
    fn back_project_principal_ray() {
        let k = table_intrinsics();
        let pose = Pose::identity();
        let p = back_project_to_plane(&k, &pose, &Vector2::new(320.0, 240.0), 3.0).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn back_project_detects_parallel_ray_and_negative_depth() {
        let k = table_intrinsics();
        // camera looking along +x after a -π/2 rotation about y: the
        // principal ray is horizontal, parallel to the ceiling
        let pose = Pose::new(Vector3::new(0.0, FRAC_PI_2, 0.0), Vector3::new(0.0, 0.0, 0.0));
        let r = pose.rotation();
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert!(r.column(2).dot(&d).abs() < 1e-12);
        assert_eq!(
            back_project_to_plane(&k, &pose, &Vector2::new(320.0, 240.0), 3.0),
            Err(CameraError::RayParallelToPlane)
        );
        // camera above the ceiling looking up: plane is behind
        let above = Pose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, -5.0));
        assert!(matches!(
            back_project_to_plane(&k, &above, &Vector2::new(320.0, 240.0), 3.0),
            Err(CameraError::NegativeDepth(_))
        ));
    }

    #[test]
    fn fov_bound_values() {
        let k = table_intrinsics();
        assert_relative_eq!(k.fov_bound(), 1.25_f64.sqrt(), epsilon = 1e-12);
        let long = CameraIntrinsics::new(1e9, 1e9, 320.0, 240.0, 640.0, 480.0).unwrap();
        assert_relative_eq!(long.fov_bound(), 1.0, epsilon = 1e-6);
        let square = CameraIntrinsics::new(100.0, 100.0, 100.0, 100.0, 200.0, 200.0).unwrap();
        assert_relative_eq!(square.fov_bound(), 3.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 800.0, 320.0, 240.0, 640.0, 480.0).is_err());
        assert!(CameraIntrinsics::new(800.0, 800.0, 700.0, 240.0, 640.0, 480.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        /// project/back_project are mutually inverse on the ceiling plane.
        #[test]
        fn back_project_round_trip(
            seed in 0u64..1000,
            x in -2.0_f64..2.0,
            y in -2.0_f64..2.0,
        ) {
            let k = table_intrinsics();
            let mut rng = StdRng::seed_from_u64(seed);
            // upward camera below the ceiling with moderate tilt
            let tilt_axis = rng.gen_range(0.0..std::f64::consts::TAU);
            let tilt = rng.gen_range(0.0..0.5);
            let omega = Vector3::new(tilt_axis.cos(), tilt_axis.sin(), 0.0) * tilt;
            let c = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.5));
            let r = rodrigues_to_matrix(&omega);
            let pose = Pose::new(omega, -(r * c));
            let z0 = 3.0;
            let world = Vector3::new(x, y, z0);
            if let Ok(pix) = project(&k, &pose, &world) {
                let back = back_project_to_plane(&k, &pose, &pix, z0).unwrap();
                prop_assert!((back - world).norm() < 1e-9);
                let pix2 = project(&k, &pose, &back).unwrap();
                prop_assert!((pix2 - pix).norm() < 1e-7);
            }
        }

        #[test]
        fn canonicalized_preserves_rotation(
            nx in -1.0_f64..1.0,
            ny in -1.0_f64..1.0,
            nz in -1.0_f64..1.0,
            angle in 0.0_f64..12.0,
        ) {
            let axis = Vector3::new(nx, ny, nz);
            prop_assume!(axis.norm() > 1e-3);
            let pose = Pose::new(axis.normalize() * angle, Vector3::zeros());
            let canon = pose.canonicalized();
            prop_assert!(canon.omega.norm() <= PI + 1e-12);
            prop_assert!((canon.rotation() - pose.rotation()).abs().max() < 1e-9);
        }
    }
}
