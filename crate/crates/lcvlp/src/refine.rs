//! Back-projection nonlinear least-squares pose refinement.
//!
//! Every retained contour pixel is back-projected onto the ceiling
//! plane under the current pose; the residual is the normalized
//! algebraic distance of the back-projected point to its LED curve.
//! The 6-vector (ω, t) is optimized with damped Gauss–Newton
//! (Levenberg–Marquardt), with the feasible-region box and the
//! reference-point constraint enforced through quadratic penalties that
//! activate only when violated, plus a final feasibility check.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{so3_left_jacobian, CameraError, CameraIntrinsics, Pose, rodrigues_to_matrix};
use crate::db::DbError;
use crate::lame::LameCurve;
use crate::scene::{Scene, SceneError};

/// Residual magnitude cap; clipped residuals contribute zero gradient.
pub const RESIDUAL_CLIP: f64 = 1e6;

/// Weight for box-constraint violations (cost 1e6 per squared meter).
const BOX_PENALTY_SQRT: f64 = 1e3;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid refine options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("LED {led_id} contour point {index} cannot be back-projected: {source}")]
    BackProjection { led_id: u32, index: usize, source: CameraError },
    #[error("reference point {index} cannot be back-projected: {source}")]
    RefPointBackProjection { index: usize, source: CameraError },
    #[error("initial pose is infeasible: {0}")]
    InfeasibleInitial(Box<RefineError>),
}

/// Axis-aligned box (the feasible region for the camera center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Box3 {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] >= self.max[i])
    }
}

/// Refinement configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Contour subsampling ratio ς in (0, 1]; one point kept every
    /// ⌊1/ς⌋.
    pub sampling_ratio: f64,
    /// Reference-point tolerance ε, meters (active only when reference
    /// points are supplied).
    pub rp_tolerance: f64,
    /// Feasible region for the camera center. Its top is clamped just
    /// below the ceiling plane at refinement time.
    pub feasible_region: Box3,
    /// Iteration cap for the damped Gauss–Newton loop.
    pub max_iterations: usize,
    /// Step-norm convergence threshold.
    pub convergence_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            sampling_ratio: 1.0,
            rp_tolerance: 0.05,
            feasible_region: Box3::new(
                Vector3::new(-1e3, -1e3, -1e3),
                Vector3::new(1e3, 1e3, 1e3),
            ),
            max_iterations: 100,
            convergence_tol: 1e-10,
        }
    }
}

impl RefineOptions {
    fn validate(&self) -> Result<(), RefineError> {
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return Err(RefineError::InvalidOptions(format!(
                "sampling_ratio must be in (0, 1], got {}",
                self.sampling_ratio
            )));
        }
        if !(self.rp_tolerance > 0.0) {
            return Err(RefineError::InvalidOptions(format!(
                "rp_tolerance must be positive, got {}",
                self.rp_tolerance
            )));
        }
        if self.feasible_region.is_empty() {
            return Err(RefineError::InvalidOptions("feasible region is empty".into()));
        }
        if self.max_iterations == 0 {
            return Err(RefineError::InvalidOptions("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Keep every ⌊1/ς⌋-th contour point starting at index 0, retaining
/// exactly ⌈ς·n⌉ points. `ς = 1` is the identity.
pub fn subsample_contour(contour: &[Vector2<f64>], sampling_ratio: f64) -> Vec<Vector2<f64>> {
    let n = contour.len();
    if n == 0 {
        return Vec::new();
    }
    let stride = (1.0 / sampling_ratio).floor().max(1.0) as usize;
    let keep = (sampling_ratio * n as f64).ceil() as usize;
    (0..keep.min(n)).map(|k| contour[k * stride]).collect()
}

/// Constraint outcome reported with the refined pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStatus {
    /// Camera center inside the feasible region; reference-point
    /// constraint (if any) satisfied.
    Satisfied,
    /// Mean squared reference-point back-projection error above ε²
    /// after the penalty ramps.
    RpInfeasible,
    /// Camera center outside the feasible region at the solution.
    BoxInfeasible,
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Step norm or relative cost decrease below threshold.
    Converged,
    /// Iteration cap reached without convergence.
    MaxIterations,
    /// Damping exhausted without an acceptable step.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub clip_count: usize,
    pub constraint_status: ConstraintStatus,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub pose: Pose,
    pub diagnostics: Diagnostics,
}

/// Scene data preprocessed for repeated evaluation: retained pixels are
/// converted to camera-frame ray directions once.
struct Prepared {
    z0: f64,
    leds: Vec<PreparedLed>,
    /// (world point, ray direction) per reference point.
    rps: Vec<(Vector3<f64>, Vector3<f64>)>,
    residual_count: usize,
}

struct PreparedLed {
    led_id: u32,
    curve: LameCurve,
    pixels: Vec<Vector2<f64>>,
    dirs: Vec<Vector3<f64>>,
    /// Per-point residual weights (gradient normalization); 1.0 in the
    /// public unweighted paths.
    weights: Vec<f64>,
    /// Per-point additive corrections removing the second-order noise
    /// bias of the distance; 0.0 in the public paths and at σ = 0.
    biases: Vec<f64>,
}

fn prepare(scene: &Scene, options: &RefineOptions) -> Result<Prepared, RefineError> {
    options.validate()?;
    scene.validate()?;
    let k = &scene.intrinsics;
    let mut leds = Vec::with_capacity(scene.observations.len());
    let mut residual_count = 0;
    for obs in &scene.observations {
        let record = scene.database.lookup(obs.led_id)?;
        let retained = subsample_contour(&obs.contour, options.sampling_ratio);
        residual_count += retained.len();
        leds.push(PreparedLed {
            led_id: obs.led_id,
            curve: record.curve,
            dirs: retained.iter().map(|p| k.ray_direction(p)).collect(),
            weights: vec![1.0; retained.len()],
            biases: vec![0.0; retained.len()],
            pixels: retained,
        });
    }
    let rps = scene
        .ref_points
        .iter()
        .map(|rp| (rp.world, k.ray_direction(&rp.pixel)))
        .collect();
    Ok(Prepared { z0: scene.z0(), leds, rps, residual_count })
}

/// Back-project one ray direction onto the plane `z = z0`.
fn back_project_dir(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    d: &Vector3<f64>,
    z0: f64,
) -> Result<Vector3<f64>, CameraError> {
    let r3 = r.column(2);
    let denom = r3.dot(d);
    if denom.abs() <= crate::camera::RAY_PLANE_EPS {
        return Err(CameraError::RayParallelToPlane);
    }
    let depth = (z0 + r3.dot(t)) / denom;
    if depth <= crate::camera::DEPTH_EPS {
        return Err(CameraError::NegativeDepth(depth));
    }
    Ok(r.transpose() * (depth * d - t))
}

/// One residual per retained contour pixel, LED-major in observation
/// order: the normalized algebraic distance of the back-projected pixel
/// to its LED curve, clipped at ±[`RESIDUAL_CLIP`].
pub fn residuals(pose: &Pose, scene: &Scene, options: &RefineOptions) -> Result<Vec<f64>, RefineError> {
    let prepared = prepare(scene, options)?;
    let r = pose.rotation();
    let mut out = Vec::with_capacity(prepared.residual_count);
    let mut clip_count = 0;
    base_residuals(&prepared, &r, &pose.t, &mut out, &mut clip_count)?;
    Ok(out)
}

fn base_residuals(
    prepared: &Prepared,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    out: &mut Vec<f64>,
    clip_count: &mut usize,
) -> Result<(), RefineError> {
    for led in &prepared.leds {
        for (index, d) in led.dirs.iter().enumerate() {
            let world = back_project_dir(r, t, d, prepared.z0).map_err(|source| {
                RefineError::BackProjection { led_id: led.led_id, index, source }
            })?;
            let raw =
                led.weights[index] * (led.curve.normalized_distance(&world) - led.biases[index]);
            if raw.abs() >= RESIDUAL_CLIP {
                *clip_count += 1;
                out.push(RESIDUAL_CLIP.copysign(raw));
            } else {
                out.push(raw);
            }
        }
    }
    Ok(())
}

/// Derivatives of a back-projected point w.r.t. (ω, t): two 3×3 blocks
/// whose columns are ∂x̂/∂ω_j and ∂x̂/∂t_j.
fn back_project_jacobian(
    r: &Matrix3<f64>,
    jl: &Matrix3<f64>,
    t: &Vector3<f64>,
    d: &Vector3<f64>,
    z0: f64,
) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let r3: Vector3<f64> = r.column(2).into();
    let denom = r3.dot(d);
    let depth = (z0 + r3.dot(t)) / denom;
    let v = depth * d - t;
    let world = r.transpose() * v;

    // ∂x̂/∂t = Rᵀ (d·r3ᵀ/denom − I)
    let dt = r.transpose() * (d * r3.transpose() / denom - Matrix3::identity());

    // per-axis: a_j = J_l e_j; ∂r3/∂ω_j = a_j × r3;
    // ∂z_c/∂ω_j from the quotient rule; ∂x̂/∂ω_j = Rᵀ(z_c'·d − a_j × v)
    let mut dw = Matrix3::zeros();
    for j in 0..3 {
        let a_j: Vector3<f64> = jl.column(j).into();
        let r3p = a_j.cross(&r3);
        let depth_p = (r3p.dot(t) * denom - (z0 + r3.dot(t)) * r3p.dot(d)) / (denom * denom);
        let col = r.transpose() * (depth_p * d - a_j.cross(&v));
        dw.set_column(j, &col);
    }
    (world, dw, dt)
}

/// Analytic Jacobian of [`residuals`] w.r.t. the 6-vector (ω, t).
/// Rows for clipped residuals are zero.
pub fn jacobian(pose: &Pose, scene: &Scene, options: &RefineOptions) -> Result<DMatrix<f64>, RefineError> {
    let prepared = prepare(scene, options)?;
    let r = pose.rotation();
    let jl = so3_left_jacobian(&pose.omega);
    let mut jac = DMatrix::zeros(prepared.residual_count, 6);
    let mut row = 0;
    for led in &prepared.leds {
        for (index, d) in led.dirs.iter().enumerate() {
            // surfacing the same error the residual pass would
            back_project_dir(&r, &pose.t, d, prepared.z0).map_err(|source| {
                RefineError::BackProjection { led_id: led.led_id, index, source }
            })?;
            let (world, dw, dt) = back_project_jacobian(&r, &jl, &pose.t, d, prepared.z0);
            let raw = led.curve.normalized_distance(&world);
            if raw.abs() >= RESIDUAL_CLIP {
                row += 1;
                continue;
            }
            let (gx, gy) = led.curve.normalized_distance_gradient(&world);
            for j in 0..3 {
                jac[(row, j)] = gx * dw[(0, j)] + gy * dw[(1, j)];
                jac[(row, j + 3)] = gx * dt[(0, j)] + gy * dt[(1, j)];
            }
            row += 1;
        }
    }
    Ok(jac)
}

/// Rows appended for penalties: (residual, jacobian row).
struct PenaltyState {
    rp_weight: f64,
}

/// Evaluate the full objective (base residuals + active penalties).
/// Returns None when a trial pose cannot be evaluated (rejected step).
fn eval_full(
    prepared: &Prepared,
    u_box: &Box3,
    penalties: &PenaltyState,
    omega: &Vector3<f64>,
    t: &Vector3<f64>,
    clip_count: &mut usize,
) -> Option<(DVector<f64>, f64)> {
    let r = rodrigues_to_matrix(omega);
    let mut res = Vec::with_capacity(prepared.residual_count + prepared.rps.len() * 2 + 3);
    if base_residuals(prepared, &r, t, &mut res, clip_count).is_err() {
        return None;
    }
    // reference points, always evaluated; their rows carry the current
    // penalty weight (zero when the constraint is inactive)
    if penalties.rp_weight > 0.0 {
        let w = (penalties.rp_weight / prepared.rps.len() as f64).sqrt();
        for (world, d) in &prepared.rps {
            let bp = back_project_dir(&r, t, d, prepared.z0).ok()?;
            res.push(w * (bp.x - world.x));
            res.push(w * (bp.y - world.y));
        }
    }
    // box penalty on the camera center, per axis, active when violated
    let center = -(r.transpose() * t);
    for i in 0..3 {
        let viol = box_violation(u_box, &center, i);
        res.push(BOX_PENALTY_SQRT * viol);
    }
    let v = DVector::from_vec(res);
    let cost = v.norm_squared();
    Some((v, cost))
}

fn box_violation(u: &Box3, center: &Vector3<f64>, axis: usize) -> f64 {
    if center[axis] > u.max[axis] {
        center[axis] - u.max[axis]
    } else if center[axis] < u.min[axis] {
        center[axis] - u.min[axis]
    } else {
        0.0
    }
}

fn eval_jacobian_full(
    prepared: &Prepared,
    penalties: &PenaltyState,
    u_box: &Box3,
    omega: &Vector3<f64>,
    t: &Vector3<f64>,
    n_rows: usize,
) -> DMatrix<f64> {
    let r = rodrigues_to_matrix(omega);
    let jl = so3_left_jacobian(omega);
    let mut jac = DMatrix::zeros(n_rows, 6);
    let mut row = 0;
    for led in &prepared.leds {
        for (index, d) in led.dirs.iter().enumerate() {
            let w = led.weights[index];
            let (world, dw, dt) = back_project_jacobian(&r, &jl, t, d, prepared.z0);
            let raw = w * (led.curve.normalized_distance(&world) - led.biases[index]);
            if raw.abs() < RESIDUAL_CLIP {
                let (gx, gy) = led.curve.normalized_distance_gradient(&world);
                for j in 0..3 {
                    jac[(row, j)] = w * (gx * dw[(0, j)] + gy * dw[(1, j)]);
                    jac[(row, j + 3)] = w * (gx * dt[(0, j)] + gy * dt[(1, j)]);
                }
            }
            row += 1;
        }
    }
    if penalties.rp_weight > 0.0 {
        let w = (penalties.rp_weight / prepared.rps.len() as f64).sqrt();
        for (_, d) in &prepared.rps {
            let (_, dw, dt) = back_project_jacobian(&r, &jl, t, d, prepared.z0);
            for comp in 0..2 {
                for j in 0..3 {
                    jac[(row, j)] = w * dw[(comp, j)];
                    jac[(row, j + 3)] = w * dt[(comp, j)];
                }
                row += 1;
            }
        }
    }
    // box rows: ∂c/∂ω_j = Rᵀ(a_j × t), ∂c/∂t = −Rᵀ
    let center = -(r.transpose() * t);
    let dc_dt = -r.transpose();
    for axis in 0..3 {
        if box_violation(u_box, &center, axis) != 0.0 {
            for j in 0..3 {
                let a_j: Vector3<f64> = jl.column(j).into();
                let dc_dw = r.transpose() * a_j.cross(t);
                jac[(row, j)] = BOX_PENALTY_SQRT * dc_dw[axis];
                jac[(row, j + 3)] = BOX_PENALTY_SQRT * dc_dt[(axis, j)];
            }
        }
        row += 1;
    }
    jac
}

fn mean_sq_rp_error(prepared: &Prepared, omega: &Vector3<f64>, t: &Vector3<f64>) -> Option<f64> {
    if prepared.rps.is_empty() {
        return Some(0.0);
    }
    let r = rodrigues_to_matrix(omega);
    let mut sum = 0.0;
    for (world, d) in &prepared.rps {
        let bp = back_project_dir(&r, t, d, prepared.z0).ok()?;
        sum += (bp - world).norm_squared();
    }
    Some(sum / prepared.rps.len() as f64)
}

/// Normalize each residual by the pixel-space gradient magnitude of
/// the distance at the initial pose, so every row carries roughly unit
/// pixel noise regardless of LED size, depth, or obliquity. The weights
/// stay frozen during the iteration, keeping the objective smooth.
fn gradient_weights(prepared: &mut Prepared, k: &CameraIntrinsics, initial: &Pose) -> Result<(), RefineError> {
    let r = initial.rotation();
    let r3: Vector3<f64> = r.column(2).into();
    let du = Vector3::new(1.0 / k.fx, 0.0, 0.0);
    let dv = Vector3::new(0.0, 1.0 / k.fy, 0.0);
    for led in &mut prepared.leds {
        for (index, d) in led.dirs.iter().enumerate() {
            let world = back_project_dir(&r, &initial.t, d, prepared.z0).map_err(|source| {
                RefineError::BackProjection { led_id: led.led_id, index, source }
            })?;
            let denom = r3.dot(d);
            let depth = (prepared.z0 + r3.dot(&initial.t)) / denom;
            // ∂x̂/∂(u,v): differentiate x̂ = Rᵀ(z_c(u,v)·d(u,v) − t)
            let ddepth_du = -depth * r3.dot(&du) / denom;
            let ddepth_dv = -depth * r3.dot(&dv) / denom;
            let dx_du = r.transpose() * (ddepth_du * d + depth * du);
            let dx_dv = r.transpose() * (ddepth_dv * d + depth * dv);
            let (gx, gy) = led.curve.normalized_distance_gradient(&world);
            let g_u = gx * dx_du.x + gy * dx_du.y;
            let g_v = gx * dx_dv.x + gy * dx_dv.y;
            let g = g_u.hypot(g_v).max(1e-9);
            led.weights[index] = 1.0 / g;
        }
    }
    Ok(())
}

struct MinimizeResult {
    omega: Vector3<f64>,
    t: Vector3<f64>,
    cost: f64,
    iterations: usize,
    termination: Termination,
    clip_count: usize,
}

/// Damped Gauss–Newton with the reference-point penalty ramp. The cost
/// sequence over accepted iterations within each ramp stage is
/// non-increasing.
fn minimize_with_ramps(
    prepared: &Prepared,
    options: &RefineOptions,
    u_box: &Box3,
    start_omega: Vector3<f64>,
    start_t: Vector3<f64>,
    iteration_budget: usize,
) -> Option<MinimizeResult> {
    let has_rps = !prepared.rps.is_empty();
    let eps2 = options.rp_tolerance * options.rp_tolerance;
    let mut penalties = PenaltyState { rp_weight: 0.0 };
    if has_rps {
        let ok = mean_sq_rp_error(prepared, &start_omega, &start_t)
            .map(|e| e <= eps2)
            .unwrap_or(false);
        if !ok {
            penalties.rp_weight = 1.0;
        }
    }
    let mut omega = start_omega;
    let mut t = start_t;
    let mut clip_count = 0;
    let (mut residual_vec, mut cost) =
        eval_full(prepared, u_box, &penalties, &omega, &t, &mut clip_count)?;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut rp_ramps = 0;

    'outer: loop {
        let mut lambda = 1e-3;
        while iterations < iteration_budget {
            let jac =
                eval_jacobian_full(prepared, &penalties, u_box, &omega, &t, residual_vec.len());
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let jtr = &jt * &residual_vec;
            let mut stepped = false;
            while lambda <= 1e12 {
                let lhs = &jtj + nalgebra::Matrix6::identity() * lambda;
                let Some(delta) = lhs.lu().solve(&(-&jtr)) else {
                    lambda *= 10.0;
                    continue;
                };
                let omega_try = omega + Vector3::new(delta[0], delta[1], delta[2]);
                let t_try = t + Vector3::new(delta[3], delta[4], delta[5]);
                let mut trial_clips = 0;
                if let Some((v_try, c_try)) =
                    eval_full(prepared, u_box, &penalties, &omega_try, &t_try, &mut trial_clips)
                {
                    if c_try <= cost {
                        let rel_decrease = (cost - c_try) / cost.max(1e-300);
                        omega = omega_try;
                        t = t_try;
                        residual_vec = v_try;
                        clip_count += trial_clips;
                        iterations += 1;
                        lambda = (lambda / 10.0).max(1e-14);
                        stepped = true;
                        if delta.norm() < options.convergence_tol || rel_decrease < 1e-12 {
                            termination = Termination::Converged;
                        }
                        cost = c_try;
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !stepped {
                termination = Termination::Stalled;
                break;
            }
            if termination == Termination::Converged {
                break;
            }
        }

        // outer reference-point feasibility loop
        if has_rps {
            let ok = mean_sq_rp_error(prepared, &omega, &t)
                .map(|e| e <= eps2)
                .unwrap_or(false);
            if !ok && rp_ramps < 3 && iterations < iteration_budget {
                rp_ramps += 1;
                penalties.rp_weight = if penalties.rp_weight == 0.0 {
                    1.0
                } else {
                    penalties.rp_weight * 10.0
                };
                let (v, c) = eval_full(prepared, u_box, &penalties, &omega, &t, &mut clip_count)
                    .expect("current state evaluates");
                residual_vec = v;
                cost = c;
                if termination != Termination::MaxIterations {
                    termination = Termination::MaxIterations;
                }
                continue 'outer;
            }
        }
        break;
    }
    Some(MinimizeResult { omega, t, cost, iterations, termination, clip_count })
}

/// Sum of squared *base* weighted residuals (no penalties) and their
/// count; the RMS estimates the pixel noise level after convergence.
fn base_cost(prepared: &Prepared, omega: &Vector3<f64>, t: &Vector3<f64>) -> Option<(f64, usize)> {
    let r = rodrigues_to_matrix(omega);
    let mut out = Vec::with_capacity(prepared.residual_count);
    let mut clips = 0;
    base_residuals(prepared, &r, t, &mut out, &mut clips).ok()?;
    Some((out.iter().map(|v| v * v).sum(), out.len()))
}

/// Noise-expectation correction: with pixel noise of std σ, the
/// expected distance at the true pose is not zero — the curve bends
/// (or, at γ = 1 vertices, kinks) across the noise cloud. The offset
/// `E[δ(px + ε)] − δ(px)` is taken by 5×5 Gauss–Hermite quadrature at
/// the current pose and subtracted from each residual. Without it the
/// optimum acquires a noise-induced pose bias that point count cannot
/// average away.
fn curvature_biases(
    prepared: &mut Prepared,
    k: &CameraIntrinsics,
    omega: &Vector3<f64>,
    t: &Vector3<f64>,
    sigma2: f64,
) {
        // 7-point Gauss–Hermite rule for N(0, 1), abscissae scaled by σ
    const GH_X: [f64; 7] = [
        -3.750439717725742,
        -2.366759410734542,
        -1.154405394739968,
        0.0,
        1.154405394739968,
        2.366759410734542,
        3.750439717725742,
    ];
    const GH_W: [f64; 7] = [
        0.000548268855972,
        0.030757123967587,
        0.240123178605013,
        0.457142857142857,
        0.240123178605013,
        0.030757123967587,
        0.000548268855972,
    ];
    let sigma = sigma2.sqrt();
    let r = rodrigues_to_matrix(omega);
    for led in &mut prepared.leds {
        for (index, pixel) in led.pixels.iter().enumerate() {
            let dist = |px: Vector2<f64>| -> Option<f64> {
                let d = k.ray_direction(&px);
                let world = back_project_dir(&r, t, &d, prepared.z0).ok()?;
                Some(led.curve.normalized_distance(&world))
            };
            let Some(c0) = dist(*pixel) else {
                led.biases[index] = 0.0;
                continue;
            };
            let mut expect = 0.0;
            let mut expect_sq = 0.0;
            let mut ok = true;
            'quad: for (xu, wu) in GH_X.iter().zip(GH_W) {
                for (xv, wv) in GH_X.iter().zip(GH_W) {
                    match dist(pixel + Vector2::new(sigma * xu, sigma * xv)) {
                        Some(v) => {
                            expect += wu * wv * v;
                            expect_sq += wu * wv * v * v;
                        }
                        None => {
                            ok = false;
                            break 'quad;
                        }
                    }
                }
            }
            let _ = expect_sq;
            led.biases[index] = if ok { expect - c0 } else { 0.0 };
        }
    }
}

/// Sensitivity of the camera center to the pose parameters, as a 3×6
/// block [∂c/∂ω | ∂c/∂t].
fn center_jacobian(omega: &Vector3<f64>, t: &Vector3<f64>) -> nalgebra::Matrix3x6<f64> {
    let r = rodrigues_to_matrix(omega);
    let jl = so3_left_jacobian(omega);
    let mut out = nalgebra::Matrix3x6::zeros();
    for j in 0..3 {
        let a_j: Vector3<f64> = jl.column(j).into();
        let col = r.transpose() * a_j.cross(t);
        out.set_column(j, &col);
    }
    let dc_dt = -r.transpose();
    for j in 0..3 {
        let col: Vector3<f64> = dc_dt.column(j).into();
        out.set_column(j + 3, &col);
    }
    out
}

/// Deterministic restarts along the weakest mode of the normal matrix.
///
/// Spurious minima of the contour objective sit roughly along the
/// poorly constrained direction and carry visibly higher cost than the
/// true basin, so re-running the minimization from a few fixed
/// displacements along that mode and keeping the lowest cost reliably
/// escapes them.
fn weak_mode_restarts(
    prepared: &Prepared,
    options: &RefineOptions,
    u_box: &Box3,
    best: &mut MinimizeResult,
    total_iterations: &mut usize,
    clip_count: &mut usize,
) {
    let jac = eval_jacobian_full(
        prepared,
        &PenaltyState { rp_weight: 0.0 },
        u_box,
        &best.omega,
        &best.t,
        prepared.residual_count + prepared.rps.len() * 2 + 3,
    );
    let jtj6 = nalgebra::Matrix6::from_iterator(
        (jac.transpose() * &jac).iter().copied(),
    );
    let eig = jtj6.symmetric_eigen();
    let mut weak = 0;
    for i in 1..6 {
        if eig.eigenvalues[i] < eig.eigenvalues[weak] {
            weak = i;
        }
    }
    let v: nalgebra::Vector6<f64> = eig.eigenvectors.column(weak).into();
    let dc = center_jacobian(&best.omega, &best.t) * v;
    let gain = dc.norm().max(0.25);
    for target in [0.35, -0.35, 1.0, -1.0] {
        let s = target / gain;
        let omega0 = best.omega + Vector3::new(v[0], v[1], v[2]) * s;
        let t0 = best.t + Vector3::new(v[3], v[4], v[5]) * s;
        let budget = options.max_iterations.min(40);
        if let Some(run) = minimize_with_ramps(prepared, options, u_box, omega0, t0, budget) {
            *total_iterations += run.iterations;
            *clip_count += run.clip_count;
            if run.cost < best.cost {
                *best = run;
            }
        }
    }
}

/// Crude overhead pose seed from the observed data alone: depth from
/// the ratio of world to apparent LED radius, position from the pixel
/// centroid of the LED pair, roll from the image direction between the
/// first two LED centroids, zero tilt. Far less accurate than the
/// correspondence-free initializer, but immune to its failure modes,
/// so it serves as an extra restart seed.
fn overhead_seed(prepared: &Prepared, k: &CameraIntrinsics) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if prepared.leds.len() < 2 {
        return None;
    }
    let mut centroids = Vec::new();
    let mut depth_sum = 0.0;
    for led in &prepared.leds {
        let n = led.pixels.len() as f64;
        let centroid = led.pixels.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
        let r_px = led.pixels.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
        if r_px < 1.0 {
            return None;
        }
        let r_world = (0..32)
            .map(|j| led.curve.polar_radius(j as f64 * std::f64::consts::TAU / 32.0))
            .sum::<f64>()
            / 32.0;
        depth_sum += 0.5 * (k.fx + k.fy) * r_world / r_px;
        centroids.push((centroid, Vector2::new(led.curve.center_x, led.curve.center_y)));
    }
    let depth = depth_sum / prepared.leds.len() as f64;
    let (c0_px, c0_w) = centroids[0];
    let (c1_px, c1_w) = centroids[1];
    let img_dir = c1_px - c0_px;
    let world_dir = c1_w - c0_w;
    if img_dir.norm() < 1e-6 || world_dir.norm() < 1e-6 {
        return None;
    }
    let roll = world_dir.y.atan2(world_dir.x) - img_dir.y.atan2(img_dir.x);
    let omega = Vector3::new(0.0, 0.0, -roll);
    let r = rodrigues_to_matrix(&omega);
    // place the camera so the first LED center back-projects onto its
    // world position at the estimated depth
    let d0 = k.ray_direction(&c0_px);
    let cam_z = prepared.z0 - depth;
    // world offset of the LED from the camera: Rᵀ(depth·d0)
    let offset = r.transpose() * (depth * d0);
    let center = Vector3::new(c0_w.x - offset.x, c0_w.y - offset.y, cam_z);
    let t = -(r * center);
    Some((omega, t))
}

/// Errors-in-variables bias of the pose: the pixel noise perturbs both
/// the residual and its Jacobian row, so at the true pose
/// `E[Jᵀr] = Σ_k Cov(J_k, r_k) ≠ 0` even though every corrected
/// residual is mean-zero, displacing the optimum by `−(JᵀJ)⁻¹·E[Jᵀr]`.
/// The expectation is taken with 5×5 Gauss–Hermite quadrature over the
/// noise distribution at the converged pose; adding the displacement
/// back removes the leading bias.
fn gradient_covariance_bias(
    prepared: &Prepared,
    k: &CameraIntrinsics,
    u_box: &Box3,
    omega: &Vector3<f64>,
    t: &Vector3<f64>,
    sigma2: f64,
) -> Option<nalgebra::Vector6<f64>> {    // 7-point Gauss–Hermite rule for N(0, 1), abscissae scaled by σ

    const GH_X: [f64; 7] = [

        -3.750439717725742,

        -2.366759410734542,

        -1.154405394739968,

        0.0,

        1.154405394739968,

        2.366759410734542,

        3.750439717725742,

    ];

    const GH_W: [f64; 7] = [

        0.000548268855972,

        0.030757123967587,

        0.240123178605013,

        0.457142857142857,

        0.240123178605013,

        0.030757123967587,

        0.000548268855972,

    ];
    let sigma = sigma2.sqrt();
    let r = rodrigues_to_matrix(omega);
    let jl = so3_left_jacobian(omega);
    let mut g_bias = nalgebra::Vector6::<f64>::zeros();
    for led in &prepared.leds {
        for (index, pixel) in led.pixels.iter().enumerate() {
            let w = led.weights[index];
            let bias_k = led.biases[index];
            for (xu, wu) in GH_X.iter().zip(GH_W) {
                for (xv, wv) in GH_X.iter().zip(GH_W) {
                    let px = pixel + Vector2::new(sigma * xu, sigma * xv);
                    let d = k.ray_direction(&px);
                    if back_project_dir(&r, t, &d, prepared.z0).is_err() {
                        return None;
                    }
                    let (world, dw, dt) = back_project_jacobian(&r, &jl, t, &d, prepared.z0);
                    let res = w * (led.curve.normalized_distance(&world) - bias_k);
                    let (gx, gy) = led.curve.normalized_distance_gradient(&world);
                    let weight = wu * wv * res * w;
                    for j in 0..3 {
                        g_bias[j] += weight * (gx * dw[(0, j)] + gy * dw[(1, j)]);
                        g_bias[j + 3] += weight * (gx * dt[(0, j)] + gy * dt[(1, j)]);
                    }
                }
            }
        }
    }
    let n_rows = prepared.residual_count + prepared.rps.len() * 2 + 3;
    let jac = eval_jacobian_full(prepared, &PenaltyState { rp_weight: 0.0 }, u_box, omega, t, n_rows);
    let jtj6 = nalgebra::Matrix6::from_iterator((jac.transpose() * &jac).iter().copied());
    let n_inv = jtj6.try_inverse()?;
    Some(n_inv * g_bias)
}

/// Refine a pose by damped Gauss–Newton on the back-projection
/// objective.
///
/// Residuals are gradient-weighted to approximately unit pixel noise.
/// After the first convergence the residual RMS estimates the noise
/// level, the second-order curvature bias of the distance is removed,
/// and the minimization repeats from the round-one pose (skipped when
/// the residuals are already at machine level, so noise-free scenes
/// finish in one round).
///
/// The cost sequence over accepted iterations of a round is
/// non-increasing. The reference-point penalty ramps ×10 (up to 3
/// times) while its constraint stays violated; if it still fails, or
/// the camera center ends outside the feasible region, the outcome is
/// flagged through [`ConstraintStatus`] rather than an error.
pub fn refine(initial: &Pose, scene: &Scene, options: &RefineOptions) -> Result<RefineOutcome, RefineError> {
    let mut prepared = prepare(scene, options)?;
    gradient_weights(&mut prepared, &scene.intrinsics, initial)
        .map_err(|e| RefineError::InfeasibleInitial(Box::new(e)))?;
    // the camera must stay strictly below the ceiling
    let mut u_box = options.feasible_region;
    u_box.max.z = u_box.max.z.min(prepared.z0 - 1e-6);
    if u_box.is_empty() {
        return Err(RefineError::InvalidOptions(
            "feasible region empty below the ceiling plane".into(),
        ));
    }

    let initial_cost = {
        let mut clips = 0;
        eval_full(&prepared, &u_box, &PenaltyState { rp_weight: 0.0 }, &initial.omega, &initial.t, &mut clips)
            .map(|(_, c)| c)
            .ok_or_else(|| {
                let r = rodrigues_to_matrix(&initial.omega);
                let mut sink = Vec::new();
                let mut cc = 0;
                let err = base_residuals(&prepared, &r, &initial.t, &mut sink, &mut cc)
                    .err()
                    .unwrap_or(RefineError::InvalidOptions("initial evaluation failed".into()));
                RefineError::InfeasibleInitial(Box::new(err))
            })?
    };

    let round1 = minimize_with_ramps(
        &prepared,
        options,
        &u_box,
        initial.omega,
        initial.t,
        options.max_iterations,
    )
    .expect("initial state already validated");

    let mut total_iterations = round1.iterations;
    let mut clip_count = round1.clip_count;
    let mut best = round1;

    weak_mode_restarts(&prepared, options, &u_box, &mut best, &mut total_iterations, &mut clip_count);

    // an independent coarse seed guards against initializers that
    // landed in a remote basin
    if let Some((omega0, t0)) = overhead_seed(&prepared, &scene.intrinsics) {
        let budget = options.max_iterations.min(60);
        if let Some(run) = minimize_with_ramps(&prepared, options, &u_box, omega0, t0, budget) {
            total_iterations += run.iterations;
            clip_count += run.clip_count;
            if run.cost < best.cost {
                best = run;
                weak_mode_restarts(&prepared, options, &u_box, &mut best, &mut total_iterations, &mut clip_count);
            }
        }
    }

    // bias-corrected second round once the noise level is known
    if let Some((ssq, n)) = base_cost(&prepared, &best.omega, &best.t) {
        let sigma2 = if n > 6 { ssq / (n - 6) as f64 } else { 0.0 };
        if sigma2 > 1e-12 && total_iterations < options.max_iterations {
            let pose1 = Pose::new(best.omega, best.t);
            if gradient_weights(&mut prepared, &scene.intrinsics, &pose1).is_ok() {
                curvature_biases(&mut prepared, &scene.intrinsics, &best.omega, &best.t, sigma2);
                if let Some(round2) = minimize_with_ramps(
                    &prepared,
                    options,
                    &u_box,
                    best.omega,
                    best.t,
                    options.max_iterations,
                ) {
                    total_iterations += round2.iterations;
                    clip_count += round2.clip_count;
                    best = round2;
                }
                // remove the errors-in-variables bias at the solution
                for _ in 0..1 {
                    let Some((ssq2, n2)) = base_cost(&prepared, &best.omega, &best.t) else {
                        break;
                    };
                    let sigma2b = if n2 > 6 { ssq2 / (n2 - 6) as f64 } else { 0.0 };
                    if sigma2b <= 1e-12 {
                        break;
                    }
                    let Some(shift) = gradient_covariance_bias(
                        &prepared,
                        &scene.intrinsics,
                        &u_box,
                        &best.omega,
                        &best.t,
                        sigma2b,
                    ) else {
                        break;
                    };
                    let omega_c = best.omega + Vector3::new(shift[0], shift[1], shift[2]);
                    let t_c = best.t + Vector3::new(shift[3], shift[4], shift[5]);
                    // keep the correction only while it leaves the state
                    // evaluable
                    let mut clips = 0;
                    if eval_full(
                        &prepared,
                        &u_box,
                        &PenaltyState { rp_weight: 0.0 },
                        &omega_c,
                        &t_c,
                        &mut clips,
                    )
                    .is_none()
                    {
                        break;
                    }
                    best.omega = omega_c;
                    best.t = t_c;
                    if shift.norm() < 1e-6 {
                        break;
                    }
                }
            }
        }
    }

    let pose = Pose::new(best.omega, best.t).canonicalized();
    let center = pose.camera_center();
    let eps2 = options.rp_tolerance * options.rp_tolerance;
    let rp_ok = mean_sq_rp_error(&prepared, &pose.omega, &pose.t)
        .map(|e| e <= eps2)
        .unwrap_or(false);
    let constraint_status = if !prepared.rps.is_empty() && !rp_ok {
        ConstraintStatus::RpInfeasible
    } else if !u_box.contains(&center, 1e-9) {
        ConstraintStatus::BoxInfeasible
    } else {
        ConstraintStatus::Satisfied
    };

    Ok(RefineOutcome {
        pose,
        diagnostics: Diagnostics {
            iterations: total_iterations,
            initial_cost,
            final_cost: best.cost,
            clip_count,
            constraint_status,
            termination: best.termination,
        },
    })
}
