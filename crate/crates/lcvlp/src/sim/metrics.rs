//! Pose error metrics.

use nalgebra::{Matrix3, Vector3};

/// Euclidean position error, meters.
pub fn position_error(truth: &Vector3<f64>, estimate: &Vector3<f64>) -> f64 {
    (estimate - truth).norm()
}

/// Rotation error in degrees: the geodesic angle of `R̂ Rᵀ`,
/// `(180/π)·arccos((tr(R̂ Rᵀ) - 1)/2)` with the argument clamped.
pub fn rotation_error_deg(truth: &Matrix3<f64>, estimate: &Matrix3<f64>) -> f64 {
    let tr = (estimate * truth.transpose()).trace();
    let arg = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
    arg.acos().to_degrees()
}
