//! Lamé-curve (superellipse) geometry.
//!
//! A Lamé curve of order `gamma` with semi-axes `a >= b` satisfies
//! `|x'/a|^γ + |y'/b|^γ = 1` in a frame rotated by `phi` about the curve
//! center. `γ = 1` gives a rhombus, `γ = 2` an ellipse, and large `γ`
//! (100 by convention) approximates a rectangle. All curves here live on
//! a horizontal plane `z = z0`.
//!
//! Powers `|u|^γ` are evaluated in the log domain so that orders like
//! `γ = 100` neither overflow nor lose the small residuals that the
//! pose refinement depends on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use nalgebra::Vector3;

/// Saturation value for `|u|^γ` terms; keeps far-outside points finite.
pub const POW_SATURATION: f64 = 1e12;

/// On-curve tolerance for generated points (algebraic distance).
pub const ON_CURVE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LameError {
    #[error("semi-axes must be positive, got a={a}, b={b}")]
    NonPositiveAxes { a: f64, b: f64 },
    #[error("curve order must satisfy gamma >= 1, got {0}")]
    OrderBelowOne(f64),
    #[error("curve parameter {0} is not finite")]
    NonFinite(&'static str),
    #[error("polar sampling needs at least 4 points, got {0}")]
    TooFewSamples(usize),
}

/// A planar Lamé curve on the ceiling plane `z = z0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LameCurve {
    /// Curve center x, meters (world frame).
    pub center_x: f64,
    /// Curve center y, meters (world frame).
    pub center_y: f64,
    /// Height of the plane carrying the curve, meters.
    pub z0: f64,
    /// Semi-major axis, meters (`a >= b` after construction).
    pub a: f64,
    /// Semi-minor axis, meters.
    pub b: f64,
    /// Curve order, `>= 1`.
    pub gamma: f64,
    /// Major-axis orientation vs. the world x-axis, radians in `[0, 2π)`.
    pub phi: f64,
}

/// Reduce an angle to `[0, 2π)`.
fn wrap_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = theta.rem_euclid(two_pi);
    // rem_euclid can return exactly 2π for tiny negative inputs
    if r >= two_pi {
        r - two_pi
    } else {
        r
    }
}

/// `|u|^p` via the log domain, saturated at [`POW_SATURATION`].
///
/// Returns 0 for `u == 0` (any `p > 0`) and 1 when `p == 0`.
fn abs_pow(u: f64, p: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    let au = u.abs();
    if au == 0.0 {
        return 0.0;
    }
    let ln = p * au.ln();
    if ln > POW_SATURATION.ln() {
        POW_SATURATION
    } else {
        ln.exp()
    }
}

/// `log(exp(t1) + exp(t2))` tolerant of `-inf` terms.
fn log_sum_exp(t1: f64, t2: f64) -> f64 {
    let m = t1.max(t2);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((t1 - m).exp() + (t2 - m).exp()).ln()
}

impl LameCurve {
    /// Build a curve, validating parameters.
    ///
    /// If `a < b` the axes are swapped and `phi` rotated by π/2, so the
    /// stored representation always has `a >= b` while describing the
    /// same point set.
    pub fn new(
        center_x: f64,
        center_y: f64,
        z0: f64,
        a: f64,
        b: f64,
        gamma: f64,
        phi: f64,
    ) -> Result<Self, LameError> {
        for (name, v) in [
            ("center_x", center_x),
            ("center_y", center_y),
            ("z0", z0),
            ("a", a),
            ("b", b),
            ("gamma", gamma),
            ("phi", phi),
        ] {
            if !v.is_finite() {
                return Err(LameError::NonFinite(name));
            }
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(LameError::NonPositiveAxes { a, b });
        }
        if gamma < 1.0 {
            return Err(LameError::OrderBelowOne(gamma));
        }
        let (a, b, phi) = if a >= b {
            (a, b, phi)
        } else {
            (b, a, phi + std::f64::consts::FRAC_PI_2)
        };
        Ok(Self {
            center_x,
            center_y,
            z0,
            a,
            b,
            gamma,
            phi: wrap_angle(phi),
        })
    }

    /// Circle of radius `r` (`γ = 2`, `a = b = r`).
    pub fn circle(center_x: f64, center_y: f64, z0: f64, r: f64) -> Result<Self, LameError> {
        Self::new(center_x, center_y, z0, r, r, 2.0, 0.0)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.center_x, self.center_y, self.z0)
    }

    /// Polar radius `ρ(θ)` in the curve's local frame:
    /// `ρ(θ) = (|cos θ|^γ/a^γ + |sin θ|^γ/b^γ)^(-1/γ)`.
    ///
    /// Total for any real `θ`. Note that for `γ > 2` the corner radii
    /// exceed `a` (up to `sqrt(a² + b²)` in the rectangle limit).
    pub fn polar_radius(&self, theta_local: f64) -> f64 {
        let (s, c) = theta_local.sin_cos();
        (-self.log_shape_sum(c, s) / self.gamma).exp()
    }

    /// `ln(|c|^γ/a^γ + |s|^γ/b^γ)` evaluated stably.
    fn log_shape_sum(&self, c: f64, s: f64) -> f64 {
        let t1 = if c == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.gamma * (c.abs().ln() - self.a.ln())
        };
        let t2 = if s == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.gamma * (s.abs().ln() - self.b.ln())
        };
        log_sum_exp(t1, t2)
    }

    /// World point on the curve at global polar angle `theta_global`
    /// (measured around the center from the world x-axis).
    ///
    /// The radius is evaluated at the local angle `θ - φ` while the
    /// direction uses the global angle, which is the rotated-superellipse
    /// parameterization.
    pub fn point_at(&self, theta_global: f64) -> Vector3<f64> {
        let rho = self.polar_radius(theta_global - self.phi);
        Vector3::new(
            self.center_x + rho * theta_global.cos(),
            self.center_y + rho * theta_global.sin(),
            self.z0,
        )
    }

    /// Offset of `point` from the center, rotated into the curve's local
    /// frame (x along the major axis). The z coordinate is ignored.
    pub fn local_offset(&self, point: &Vector3<f64>) -> (f64, f64) {
        let dx = point.x - self.center_x;
        let dy = point.y - self.center_y;
        let (s, c) = self.phi.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Signed algebraic distance `|Δx'/a|^γ + |Δy'/b|^γ - 1`.
    ///
    /// Zero on the curve, negative strictly inside, positive outside.
    /// Power terms saturate at [`POW_SATURATION`] so far-away points
    /// stay finite.
    pub fn algebraic_distance(&self, point: &Vector3<f64>) -> f64 {
        let (lx, ly) = self.local_offset(point);
        abs_pow(lx / self.a, self.gamma) + abs_pow(ly / self.b, self.gamma) - 1.0
    }

    /// Normalized (γ-th-root) algebraic distance:
    /// `(|Δx'/a|^γ + |Δy'/b|^γ)^(1/γ) - 1`.
    ///
    /// Shares the zero set and sign of [`Self::algebraic_distance`] and
    /// equals the relative radial offset of the point: a point at radius
    /// `(1+δ)·ρ(θ)` maps to exactly `δ`. Behaves uniformly across curve
    /// orders, which keeps least-squares residuals well scaled at
    /// `γ = 100` where the raw power form spans hundreds of orders of
    /// magnitude across a few pixels of noise.
    pub fn normalized_distance(&self, point: &Vector3<f64>) -> f64 {
        let (lx, ly) = self.local_offset(point);
        (self.log_shape_sum_offsets(lx, ly) / self.gamma).exp() - 1.0
    }

    /// Gradient of [`Self::normalized_distance`] w.r.t. the world x/y
    /// coordinates of the point.
    pub fn normalized_distance_gradient(&self, point: &Vector3<f64>) -> (f64, f64) {
        let (lx, ly) = self.local_offset(point);
        let ls = self.log_shape_sum_offsets(lx, ly);
        if ls == f64::NEG_INFINITY {
            // exact center: the distance has a conical point; pick 0
            return (0.0, 0.0);
        }
        // d/du (S^{1/γ}) = S^{1/γ-1} · |u/c|^{γ-1} · sgn(u) / c
        let g = self.gamma;
        let common = (1.0 / g - 1.0) * ls;
        let term = |u: f64, c: f64, one_sided: f64| -> f64 {
            let sign = if u == 0.0 { one_sided } else { u.signum() };
            let lnu = if u == 0.0 {
                if g == 1.0 {
                    0.0
                } else {
                    return 0.0;
                }
            } else {
                (g - 1.0) * (u.abs() / c).ln()
            };
            sign / c * (common + lnu).exp()
        };
        // One-sided convention at γ=1 ridge lines: limit from above.
        let gx_local = term(lx, self.a, 1.0);
        let gy_local = term(ly, self.b, 1.0);
        let (s, c) = self.phi.sin_cos();
        (c * gx_local - s * gy_local, s * gx_local + c * gy_local)
    }

    fn log_shape_sum_offsets(&self, lx: f64, ly: f64) -> f64 {
        let t1 = if lx == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.gamma * ((lx.abs() / self.a).ln())
        };
        let t2 = if ly == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.gamma * ((ly.abs() / self.b).ln())
        };
        log_sum_exp(t1, t2)
    }

    /// `M` on-curve world points at local polar angles
    /// `β + k·2π/M (mod 2π)`, i.e. the first point sits at local angle
    /// `β` and the rest proceed counterclockwise.
    pub fn sample_polar(&self, beta: f64, samples: usize) -> Result<Vec<Vector3<f64>>, LameError> {
        if samples < 4 {
            return Err(LameError::TooFewSamples(samples));
        }
        let step = std::f64::consts::TAU / samples as f64;
        Ok((0..samples)
            .map(|k| self.point_at(self.phi + beta + k as f64 * step))
            .collect())
    }

    /// `dρ/dθ` in the local frame.
    ///
    /// At the `γ = 1` axis corners the derivative is discontinuous; the
    /// one-sided value from above (θ → θ⁺) is returned.
    pub fn polar_radius_derivative(&self, theta_local: f64) -> f64 {
        let (s, c) = theta_local.sin_cos();
        // snap to the corner so the one-sided convention applies at
        // floating-point representations of π/2 multiples
        let c = if c.abs() < 1e-12 { 0.0 } else { c };
        let s = if s.abs() < 1e-12 { 0.0 } else { s };
        let ls = self.log_shape_sum(c, s);
        let rho = (-ls / self.gamma).exp();
        let g = self.gamma;
        // dρ/dθ = ρ · (w1·s/c − w2·c/s) with wi the normalized shape terms;
        // each product is assembled in the log domain so γ-1 powers of a
        // vanishing cosine/sine cancel correctly.
        let term = |num: f64, den: f64, den_axis: f64, sgn_den: f64| -> f64 {
            // w·num/den where w = |den|^γ/axis^γ / exp(ls)
            if num == 0.0 {
                return 0.0;
            }
            if den == 0.0 && g > 1.0 {
                return 0.0;
            }
            let ln_den = if den == 0.0 { 0.0 } else { (g - 1.0) * den.abs().ln() };
            let mag = (ln_den - g * den_axis.ln() - ls + num.abs().ln()).exp();
            mag * num.signum() * sgn_den
        };
        // One-sided signs at exact corners: sgn(cos(θ+)) = -sgn(s),
        // sgn(sin(θ+)) = sgn(c).
        let sgn_c = if c != 0.0 { c.signum() } else { -s.signum() };
        let sgn_s = if s != 0.0 { s.signum() } else { c.signum() };
        rho * (term(s, c, self.a, sgn_c) - term(c, s, self.b, sgn_s))
    }

    /// Arc-length differential `dℓ/dθ = sqrt((dρ/dθ)² + ρ²)` at a local
    /// polar angle, meters per radian. Integrating over `[0, 2π)` gives
    /// the curve perimeter.
    pub fn arc_length_differential(&self, theta_local: f64) -> f64 {
        let rho = self.polar_radius(theta_local);
        let drho = self.polar_radius_derivative(theta_local);
        (drho * drho + rho * rho).sqrt()
    }

    /// `M` on-curve world points spaced uniformly in arc length,
    /// starting at local polar angle `beta` and proceeding
    /// counterclockwise.
    ///
    /// For circles this coincides with uniform polar-angle sampling;
    /// for other orders it matches how uniformly extracted contour
    /// pixels advance along the projected curve, which polar-angle
    /// sampling does not.
    pub fn sample_arc_uniform(
        &self,
        beta: f64,
        samples: usize,
    ) -> Result<Vec<Vector3<f64>>, LameError> {
        if samples < 4 {
            return Err(LameError::TooFewSamples(samples));
        }
        // dense chord-length table over one revolution from β
        const DENSE: usize = 1024;
        let step = std::f64::consts::TAU / DENSE as f64;
        let mut cumulative = [0.0; DENSE + 1];
        let mut prev = self.point_at(self.phi + beta);
        for j in 1..=DENSE {
            let p = self.point_at(self.phi + beta + j as f64 * step);
            cumulative[j] = cumulative[j - 1] + (p - prev).norm();
            prev = p;
        }
        let total = cumulative[DENSE];
        let mut out = Vec::with_capacity(samples);
        let mut seg = 0;
        for k in 0..samples {
            let target = k as f64 * total / samples as f64;
            while seg + 1 < cumulative.len() && cumulative[seg + 1] < target {
                seg += 1;
            }
            let (s0, s1) = (cumulative[seg], cumulative[seg + 1]);
            let frac = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
            let theta = beta + (seg as f64 + frac) * step;
            out.push(self.point_at(self.phi + theta));
        }
        Ok(out)
    }
}
