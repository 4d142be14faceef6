//! Rotational kinematics of the apparent star motion: skew matrices,
//! camera-frame coordinate rates, and the focal-plane motion matrix.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Angular rates about the camera axes, rad/s. `r` is the rate about the
/// boresight (3-axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularRates {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl AngularRates {
    pub fn new(p: f64, q: f64, r: f64) -> Self {
        Self { p, q, r }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.p, self.q, self.r)
    }

    pub fn from_deg_s(p: f64, q: f64, r: f64) -> Self {
        Self::new(p.to_radians(), q.to_radians(), r.to_radians())
    }

    pub fn to_deg_s(&self) -> (f64, f64, f64) {
        (self.p.to_degrees(), self.q.to_degrees(), self.r.to_degrees())
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite() && self.r.is_finite()
    }
}

/// One local measurement of the apparent image velocity. Positions are in
/// centered focal-plane coordinates (pixels), velocities in pixels/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionFieldSample {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    /// Non-negative relative weight (event count for tile-derived samples).
    pub weight: f64,
}

/// Skew-symmetric matrix of the angular velocity vector:
/// `skew(w) * a == w x a`.
pub fn skew(rates: &AngularRates) -> Matrix3<f64> {
    let AngularRates { p, q, r } = *rates;
    Matrix3::new(
        0.0, -r, q, //
        r, 0.0, -p, //
        -q, p, 0.0,
    )
}

/// Apparent rate of change of a star's camera-frame coordinates under
/// rotation: `(V_X, V_Y, V_Z) = -w x v`.
pub fn coordinate_rates(v_cam: &Vector3<f64>, rates: &AngularRates) -> Vector3<f64> {
    let AngularRates { p, q, r } = *rates;
    Vector3::new(
        r * v_cam.y - q * v_cam.z,
        -r * v_cam.x + p * v_cam.z,
        q * v_cam.x - p * v_cam.y,
    )
}

/// The 2x3 matrix mapping angular rates to the focal-plane motion field at
/// centered pixel position (x, y):
///
/// ```text
/// F(x, y) = 1/f * [  x*y      -(f^2 + x^2)   y*f ]
///                 [  f^2+y^2   -x*y         -x*f ]
/// ```
pub fn motion_matrix(x: f64, y: f64, f: f64) -> Matrix2x3<f64> {
    Matrix2x3::new(
        x * y / f,
        -(f * f + x * x) / f,
        y,
        (f * f + y * y) / f,
        -x * y / f,
        -x,
    )
}

/// Apparent image velocity `(u, v)` in pixels/s at centered pixel position
/// (x, y) for the given angular rates.
pub fn motion_field(x: f64, y: f64, f: f64, rates: &AngularRates) -> (f64, f64) {
    let uv = motion_matrix(x, y, f) * rates.as_vector();
    (uv.x, uv.y)
}
