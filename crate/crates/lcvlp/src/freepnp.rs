//! Correspondence-free PnP initialization.
//!
//! Builds approximate virtual 3D–2D correspondences from identified LED
//! contours without pre-calibrated reference points, then solves a
//! planar PnP for an initial pose estimate. The construction leans on
//! two facts:
//!
//! * collinearity is preserved by the pinhole projection, so the contour
//!   pixel "toward" a neighboring LED corresponds to the world boundary
//!   point on the segment between the LED centers, and
//! * for a densely, uniformly extracted contour, uniform index sampling
//!   approximates uniform polar-angle sampling of the world curve.
//!
//! All correspondences live on the ceiling plane, so the PnP step is a
//! normalized-DLT homography fit followed by pose extraction, rather
//! than a general solver.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, Pose};
use crate::db::{DbError, LedRecord};
use crate::lame::LameError;
use crate::scene::{Scene, SceneError};

#[derive(Debug, Error)]
pub enum FreePnpError {
    #[error("need at least 2 observed LEDs, got {0}")]
    InsufficientObservations(usize),
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Lame(#[from] LameError),
    #[error("projected LED centers coincide; start-pixel direction undefined")]
    ZeroDirection,
    #[error("LED centers coincide in the world; start polar angle undefined")]
    CoincidentCenters,
    #[error("observation {0}: contour is degenerate (zero enclosed area)")]
    DegenerateContour(u32),
    #[error("observation {0}: contour points are not in boundary order")]
    NonMonotoneContour(u32),
    #[error("observation {id}: {points} contour points cannot support {needed} samples")]
    ContourTooSparse { id: u32, points: usize, needed: usize },
    #[error("correspondences are degenerate (collinear or rank-deficient)")]
    DegenerateConfiguration,
    #[error("world points are not coplanar on a single ceiling plane")]
    NotCoplanar,
    #[error("no homography decomposition places all points in front of a below-ceiling camera")]
    NoValidDecomposition,
}

/// A virtual 3D–2D correspondence on the ceiling plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

/// Initializer configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FreePnpConfig {
    /// Virtual correspondences sampled per LED (`M >= 4`).
    pub samples_per_led: usize,
}

impl Default for FreePnpConfig {
    fn default() -> Self {
        Self { samples_per_led: 12 }
    }
}

/// Centroid of the contour pixels, used as the projected LED center.
pub fn projected_center(contour: &[Vector2<f64>]) -> Vector2<f64> {
    let sum = contour.iter().fold(Vector2::zeros(), |acc, p| acc + p);
    sum / contour.len() as f64
}

/// Index of the contour point whose direction from `center` has the
/// smallest included angle with `neighbor - center`. Ties go to the
/// smallest index.
pub fn select_start_pixel(
    contour: &[Vector2<f64>],
    center: &Vector2<f64>,
    neighbor: &Vector2<f64>,
) -> Result<usize, FreePnpError> {
    let dir = neighbor - center;
    let dn = dir.norm();
    if dn <= 1e-12 {
        return Err(FreePnpError::ZeroDirection);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in contour.iter().enumerate() {
        let v = p - center;
        let vn = v.norm();
        if vn <= 1e-12 {
            continue;
        }
        let cos = v.dot(&dir) / (vn * dn);
        if best.map_or(true, |(_, b)| cos > b) {
            best = Some((i, cos));
        }
    }
    best.map(|(i, _)| i).ok_or(FreePnpError::ZeroDirection)
}

/// Starting polar angle of the world boundary point facing the neighbor
/// LED, measured in the LED's own (major-axis-aligned) frame:
/// `β = atan2(ȳ_n - ȳ, x̄_n - x̄) - φ`.
pub fn start_polar_angle(
    record: &LedRecord,
    neighbor: &LedRecord,
) -> Result<f64, FreePnpError> {
    let dx = neighbor.curve.center_x - record.curve.center_x;
    let dy = neighbor.curve.center_y - record.curve.center_y;
    if dx.hypot(dy) <= 1e-12 {
        return Err(FreePnpError::CoincidentCenters);
    }
    Ok(dy.atan2(dx) - record.curve.phi)
}

/// Twice the signed area of the closed polygon in raw pixel coordinates.
fn signed_area2(contour: &[Vector2<f64>]) -> f64 {
    let n = contour.len();
    (0..n)
        .map(|i| {
            let p = &contour[i];
            let q = &contour[(i + 1) % n];
            p.x * q.y - q.x * p.y
        })
        .sum()
}

/// Rotate the contour to start at `start_index` and orient it so the
/// traversal is counterclockwise.
///
/// For an upward-looking camera the pinhole map from the ceiling plane
/// preserves orientation in raw (u, v) coordinates, so counterclockwise
/// here means positive signed polygon area of the (u, v) sequence —
/// matching the world-side counterclockwise polar sweep.
pub fn reorder_ccw(
    contour: &[Vector2<f64>],
    start_index: usize,
    led_id: u32,
) -> Result<Vec<Vector2<f64>>, FreePnpError> {
    let n = contour.len();
    let area2 = signed_area2(contour);
    let scale = contour
        .iter()
        .map(|p| (p - contour[0]).norm())
        .fold(0.0_f64, f64::max);
    if area2.abs() <= 1e-9 * scale * scale || scale == 0.0 {
        return Err(FreePnpError::DegenerateContour(led_id));
    }
    let out = if area2 > 0.0 {
        (0..n).map(|k| contour[(start_index + k) % n]).collect()
    } else {
        (0..n).map(|k| contour[(start_index + n - k) % n]).collect()
    };
    Ok(out)
}

/// Evenly spaced sampling indices `{floor(k·n/M)}` for `k = 0..M`.
pub fn sample_indices(n: usize, samples: usize) -> Result<Vec<usize>, FreePnpError> {
    if n < samples {
        return Err(FreePnpError::ContourTooSparse { id: 0, points: n, needed: samples });
    }
    Ok((0..samples).map(|k| k * n / samples).collect())
}

/// Reject contours whose angular ordering around the centroid is wildly
/// non-monotone (e.g. shuffled points). A boundary-ordered contour winds
/// once around the centroid with backtracking bounded by the per-point
/// angular jitter, so its total absolute winding stays far below the
/// ~n·π/2 of a random ordering.
fn check_boundary_order(contour: &[Vector2<f64>], center: &Vector2<f64>) -> bool {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let n = contour.len();
    for i in 0..=n {
        let p = &contour[i % n];
        let ang = (p.y - center.y).atan2(p.x - center.x);
        if let Some(a) = prev {
            let mut d = ang - a;
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            }
            while d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            total += d.abs();
        }
        prev = Some(ang);
    }
    total <= 4.0 * std::f64::consts::TAU + n as f64 * std::f64::consts::FRAC_PI_4
}

/// Build the `N·M` virtual correspondences of the initializer.
///
/// For each observed LED `i` the neighbor `(i+1) mod N` fixes a start
/// point on both the world curve (polar angle toward the neighbor) and
/// the contour (pixel toward the neighbor's projected center); both
/// sides are then sampled uniformly — by polar angle in the world, by
/// index along the counterclockwise contour in the image.
pub fn build_virtual_correspondences(
    scene: &Scene,
    config: &FreePnpConfig,
) -> Result<Vec<Correspondence>, FreePnpError> {
    scene.validate()?;
    let n_leds = scene.observations.len();
    if n_leds < 2 {
        return Err(FreePnpError::InsufficientObservations(n_leds));
    }
    let m = config.samples_per_led;
    let records: Vec<&LedRecord> = scene
        .observations
        .iter()
        .map(|o| scene.database.lookup(o.led_id))
        .collect::<Result<_, _>>()?;
    let centers: Vec<Vector2<f64>> = scene
        .observations
        .iter()
        .map(|o| projected_center(&o.contour))
        .collect();
    let mut correspondences = Vec::with_capacity(n_leds * m);
    for i in 0..n_leds {
        let neighbor = (i + 1) % n_leds;
        let obs = &scene.observations[i];
        let n_pts = obs.contour.len();
        if n_pts < m {
            return Err(FreePnpError::ContourTooSparse {
                id: obs.led_id,
                points: n_pts,
                needed: m,
            });
        }
        if !check_boundary_order(&obs.contour, &centers[i]) {
            return Err(FreePnpError::NonMonotoneContour(obs.led_id));
        }
        let start = select_start_pixel(&obs.contour, &centers[i], &centers[neighbor])?;
        let beta = start_polar_angle(records[i], records[neighbor])?;
        // contour pixels advance uniformly in projected arc length, and
        // the projection maps world arc length near-proportionally, so
        // the world side samples uniformly in arc length from β (equal
        // to uniform polar angle for circles)
        let world = records[i].curve.sample_arc_uniform(beta, m)?;
        let ordered = reorder_ccw(&obs.contour, start, obs.led_id)?;
        let indices = sample_indices(n_pts, m).map_err(|e| match e {
            FreePnpError::ContourTooSparse { points, needed, .. } => {
                FreePnpError::ContourTooSparse { id: obs.led_id, points, needed }
            }
            other => other,
        })?;
        correspondences.extend(
            world
                .into_iter()
                .zip(indices.into_iter().map(|j| ordered[j]))
                .map(|(w, p)| Correspondence { world: w, pixel: p }),
        );
    }
    Ok(correspondences)
}

/// Pose from 4+ coplanar (ceiling-plane) correspondences via normalized
/// DLT homography estimation and decomposition, polished to a local
/// minimum of the reprojection RMS.
///
/// The homography maps world `(x, y, 1)` on the plane `z = z0` to pixel
/// `(u, v, 1)`, so `K⁻¹H ∝ [r1, r2, z0·r3 + t]`. The scale comes from
/// the rotation-column norms, the sign from requiring positive depths
/// and a camera below the ceiling, and `[r1 r2 r1×r2]` is projected to
/// the nearest rotation. The algebraic solution is then refined with a
/// few damped Gauss–Newton steps on the reprojection error, which the
/// decomposition alone does not minimize.
pub fn planar_pnp(
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<Pose, FreePnpError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(FreePnpError::InsufficientCorrespondences(n));
    }
    let z0 = correspondences[0].world.z;
    if correspondences.iter().any(|c| (c.world.z - z0).abs() > 1e-9) {
        return Err(FreePnpError::NotCoplanar);
    }

    // guard: all world points collinear → homography underdetermined
    if planar_rank_deficient(correspondences) {
        return Err(FreePnpError::DegenerateConfiguration);
    }

    let h = homography_dlt(correspondences)?;

    let b = k.matrix().try_inverse().expect("intrinsics are invertible") * h;
    let scale = 2.0 / (b.column(0).norm() + b.column(1).norm());
    // polish every admissible sign branch; near-degenerate geometries
    // can draw the wrong branch into a far local minimum, so the
    // reprojection RMS decides
    let mut best: Option<(f64, Pose)> = None;
    for lambda in [scale, -scale] {
        let r1 = lambda * b.column(0);
        let r2 = lambda * b.column(1);
        let r3 = r1.cross(&r2);
        let approx = Matrix3::from_columns(&[r1, r2, r3]);
        let rot = nearest_rotation(&approx);
        let t = lambda * b.column(2) - z0 * rot.column(2);
        let pose = match Pose::from_matrix(&rot, t) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let center = pose.camera_center();
        let all_in_front = correspondences
            .iter()
            .all(|c| (rot * c.world + t).z > crate::camera::DEPTH_EPS);
        if all_in_front && center.z < z0 {
            let polished = polish_reprojection(&pose, correspondences, k);
            if let Some(rms) = reprojection_rms(&polished, correspondences, k) {
                if best.as_ref().map_or(true, |(b_rms, _)| rms < *b_rms) {
                    best = Some((rms, polished));
                }
            }
        }
    }
    best.map(|(_, pose)| pose).ok_or(FreePnpError::NoValidDecomposition)
}

fn reprojection_rms(
    pose: &Pose,
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Option<f64> {
    let r = pose.rotation();
    let mut sum = 0.0;
    for c in correspondences {
        let p = crate::camera::project_with_rotation(k, &r, &pose.t, &c.world).ok()?;
        sum += (p - c.pixel).norm_squared();
    }
    Some((sum / correspondences.len() as f64).sqrt())
}

/// Damped Gauss–Newton on the summed squared reprojection error over
/// (ω, t). Keeps the decomposition pose when no step improves it.
fn polish_reprojection(
    initial: &Pose,
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Pose {
    use crate::camera::{project_with_rotation, rodrigues_to_matrix, so3_left_jacobian};

    let eval = |omega: &Vector3<f64>, t: &Vector3<f64>| -> Option<(DVector<f64>, f64)> {
        let r = rodrigues_to_matrix(omega);
        let mut res = DVector::zeros(correspondences.len() * 2);
        for (i, c) in correspondences.iter().enumerate() {
            let p = project_with_rotation(k, &r, t, &c.world).ok()?;
            res[2 * i] = p.x - c.pixel.x;
            res[2 * i + 1] = p.y - c.pixel.y;
        }
        let cost = res.norm_squared();
        Some((res, cost))
    };

    let mut omega = initial.omega;
    let mut t = initial.t;
    let Some((mut res, mut cost)) = eval(&omega, &t) else {
        return *initial;
    };
    let mut lambda = 1e-3;
    for _ in 0..20 {
        let r = rodrigues_to_matrix(&omega);
        let jl = so3_left_jacobian(&omega);
        let mut jac = DMatrix::zeros(correspondences.len() * 2, 6);
        for (i, c) in correspondences.iter().enumerate() {
            let xc = r * c.world + t;
            let inv_z = 1.0 / xc.z;
            // ∂(u,v)/∂xc for the pinhole map
            let du = Vector3::new(k.fx * inv_z, 0.0, -k.fx * xc.x * inv_z * inv_z);
            let dv = Vector3::new(0.0, k.fy * inv_z, -k.fy * xc.y * inv_z * inv_z);
            for j in 0..3 {
                let a_j: Vector3<f64> = jl.column(j).into();
                let dxc = a_j.cross(&(r * c.world));
                jac[(2 * i, j)] = du.dot(&dxc);
                jac[(2 * i + 1, j)] = dv.dot(&dxc);
                jac[(2 * i, j + 3)] = du[j];
                jac[(2 * i + 1, j + 3)] = dv[j];
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &res;
        let mut stepped = false;
        while lambda <= 1e10 {
            let lhs = &jtj + nalgebra::Matrix6::identity() * lambda;
            let Some(delta) = lhs.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let omega_try = omega + Vector3::new(delta[0], delta[1], delta[2]);
            let t_try = t + Vector3::new(delta[3], delta[4], delta[5]);
            if let Some((res_try, cost_try)) = eval(&omega_try, &t_try) {
                if cost_try <= cost {
                    omega = omega_try;
                    t = t_try;
                    res = res_try;
                    let done = delta.norm() < 1e-12 || (cost - cost_try) < 1e-12 * cost.max(1e-300);
                    cost = cost_try;
                    lambda = (lambda / 10.0).max(1e-12);
                    stepped = true;
                    if done {
                        return Pose::new(omega, t);
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !stepped {
            break;
        }
    }
    Pose::new(omega, t)
}

/// The full initializer: virtual correspondences plus the planar solve.
pub fn freepnp(scene: &Scene, config: &FreePnpConfig) -> Result<Pose, FreePnpError> {
    let correspondences = build_virtual_correspondences(scene, config)?;
    planar_pnp(&correspondences, &scene.intrinsics)
}

fn planar_rank_deficient(correspondences: &[Correspondence]) -> bool {
    let n = correspondences.len() as f64;
    let mean = correspondences
        .iter()
        .fold(Vector2::zeros(), |acc, c| acc + c.world.xy())
        / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for c in correspondences {
        let d = c.world.xy() - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    // smaller eigenvalue of the 2x2 scatter matrix
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lam_min = tr / 2.0 - disc;
    lam_min <= 1e-12 * tr.max(1e-300)
}

/// Hartley-normalized DLT homography from world-plane (x, y) to pixels.
fn homography_dlt(correspondences: &[Correspondence]) -> Result<Matrix3<f64>, FreePnpError> {
    let world: Vec<Vector2<f64>> = correspondences.iter().map(|c| c.world.xy()).collect();
    let pixel: Vec<Vector2<f64>> = correspondences.iter().map(|c| c.pixel).collect();
    let t_w = normalizing_transform(&world);
    let t_p = normalizing_transform(&pixel);

    let n = correspondences.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, (w, p)) in world.iter().zip(pixel.iter()).enumerate() {
        let wn = t_w * Vector3::new(w.x, w.y, 1.0);
        let pn = t_p * Vector3::new(p.x, p.y, 1.0);
        let (x, y) = (wn.x, wn.y);
        let (u, v) = (pn.x, pn.y);
        let rows = [
            [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u],
            [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v],
        ];
        for (r, row) in rows.iter().enumerate() {
            for (c, val) in row.iter().enumerate() {
                a[(i * 2 + r, c)] = *val;
            }
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("SVD with V requested");
    let sv = &svd.singular_values;
    let mut min_idx = 0;
    let mut max_sv = 0.0_f64;
    for i in 0..sv.len() {
        if sv[i] < sv[min_idx] {
            min_idx = i;
        }
        max_sv = max_sv.max(sv[i]);
    }
    // with 8 genuine constraints the 8th singular value must be well
    // above noise; otherwise the system is rank-deficient
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sorted[7] <= 1e-10 * max_sv {
        return Err(FreePnpError::DegenerateConfiguration);
    }
    let h_vec = v_t.row(min_idx);
    let h_norm = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2],
        h_vec[3], h_vec[4], h_vec[5],
        h_vec[6], h_vec[7], h_vec[8],
    );
    let t_p_inv = t_p.try_inverse().expect("similarity transform invertible");
    Ok(t_p_inv * h_norm * t_w)
}

/// Similarity transform moving the points to zero mean and mean
/// distance √2.
fn normalizing_transform(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 {
        2.0_f64.sqrt() / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

/// Nearest rotation in the Frobenius sense, via SVD with a determinant
/// sign fix.
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD");
    let v_t = svd.v_t.expect("3x3 SVD");
    let d = (u * v_t).determinant();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum())) * v_t
}
