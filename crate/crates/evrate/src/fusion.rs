//! Dual-camera rate fusion and inertial-frame transformation.
//!
//! Two orthogonally mounted cameras each observe their transverse rates well
//! but their own roll poorly; fusing only the transverse channels recovers
//! all three axes. With the default mounting the fused solution reduces to
//! `p_f = (p1 + p2)/2, q_f = q1, r_f = -q2` in the camera-A frame.

use nalgebra::{Matrix3, Rotation3, SMatrix, Vector3, Vector4};
use thiserror::Error;

use crate::estimator::RateEstimate;
use crate::geometry::RotationMatrix;
use crate::kinematics::AngularRates;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("mounting leaves an axis unobservable from the transverse channels (condition number {condition_number:.3e})")]
    UnobservableAxis { condition_number: f64 },
}

/// Relative orientation of the two cameras, stored as the rotation taking
/// camera-B coordinates into camera-A coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMounting {
    r_b_to_a: RotationMatrix,
}

impl DualMounting {
    /// Orthogonal mounting: B's 1-axis equals A's 1-axis, B's 2-axis equals
    /// minus A's 3-axis, B's 3-axis equals A's 2-axis. Each camera's weak
    /// roll axis lines up with a transverse axis of the other.
    pub fn orthogonal() -> Self {
        let m = Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, //
            0.0, -1.0, 0.0,
        );
        Self { r_b_to_a: Rotation3::from_matrix_unchecked(m) }
    }

    /// Arbitrary mounting, for misalignment studies.
    pub fn new(r_b_to_a: RotationMatrix) -> Self {
        Self { r_b_to_a }
    }

    pub fn b_to_a(&self) -> &RotationMatrix {
        &self.r_b_to_a
    }

    pub fn a_to_b(&self) -> RotationMatrix {
        self.r_b_to_a.inverse()
    }
}

impl Default for DualMounting {
    fn default() -> Self {
        Self::orthogonal()
    }
}

/// Fused angular rates with propagated covariance.
#[derive(Debug, Clone)]
pub struct FusedRates {
    pub rates: AngularRates,
    /// Covariance in the frame the fusion was solved in, (rad/s)^2.
    pub covariance: Matrix3<f64>,
}

/// Solve for the full rate vector from the four transverse channels
/// `(p_a, q_a, p_b, q_b)`, where `map_a` and `map_b` give each camera's
/// transverse axes in the solution frame.
fn fuse_transverse(
    a: &RateEstimate,
    b: &RateEstimate,
    map_a: &Matrix3<f64>,
    map_b: &Matrix3<f64>,
    inverse_variance: bool,
) -> Result<FusedRates, FusionError> {
    // Stacked 4x3 system: rows are the first two rows of each camera map.
    let mut h = SMatrix::<f64, 4, 3>::zeros();
    h.fixed_view_mut::<2, 3>(0, 0).copy_from(&map_a.fixed_view::<2, 3>(0, 0));
    h.fixed_view_mut::<2, 3>(2, 0).copy_from(&map_b.fixed_view::<2, 3>(0, 0));
    let y = Vector4::new(a.rates.p, a.rates.q, b.rates.p, b.rates.q);

    let weights = if inverse_variance {
        Vector4::new(
            1.0 / a.covariance[(0, 0)].max(1e-18),
            1.0 / a.covariance[(1, 1)].max(1e-18),
            1.0 / b.covariance[(0, 0)].max(1e-18),
            1.0 / b.covariance[(1, 1)].max(1e-18),
        )
    } else {
        Vector4::repeat(1.0)
    };

    let w = SMatrix::<f64, 4, 4>::from_diagonal(&weights);
    let normal = h.transpose() * w * h;
    let eigen = normal.symmetric_eigenvalues();
    let lambda_max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lambda_min > lambda_max * 1e-9) {
        return Err(FusionError::UnobservableAxis {
            condition_number: if lambda_min > 0.0 {
                (lambda_max / lambda_min).sqrt()
            } else {
                f64::INFINITY
            },
        });
    }
    let normal_inv = normal.try_inverse().expect("normal matrix checked nonsingular");
    // x = M y with M = (H'WH)^-1 H'W; covariance = M C M'.
    let m = normal_inv * h.transpose() * w;
    let x = m * y;

    // Input covariance of the four transverse channels (cross terms between
    // the two cameras vanish: independent streams).
    let mut c4 = SMatrix::<f64, 4, 4>::zeros();
    c4.fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&a.covariance.fixed_view::<2, 2>(0, 0));
    c4.fixed_view_mut::<2, 2>(2, 2)
        .copy_from(&b.covariance.fixed_view::<2, 2>(0, 0));
    let covariance = m * c4 * m.transpose();

    Ok(FusedRates { rates: AngularRates::from_vector(&x), covariance })
}

/// Fuse two single-camera estimates into camera-A-frame rates, discarding
/// both cameras' roll channels.
pub fn fuse(
    estimate_a: &RateEstimate,
    estimate_b: &RateEstimate,
    mounting: &DualMounting,
    inverse_variance: bool,
) -> Result<FusedRates, FusionError> {
    // Camera A measures the solution frame directly; camera B's transverse
    // channels see the solution rates through the A-to-B map.
    let map_a = Matrix3::identity();
    let map_b = *mounting.a_to_b().matrix();
    fuse_transverse(estimate_a, estimate_b, &map_a, &map_b, inverse_variance)
}

/// Same fusion solved in the camera-B frame.
pub fn fuse_in_b_frame(
    estimate_a: &RateEstimate,
    estimate_b: &RateEstimate,
    mounting: &DualMounting,
    inverse_variance: bool,
) -> Result<FusedRates, FusionError> {
    let map_a = *mounting.b_to_a().matrix();
    let map_b = Matrix3::identity();
    fuse_transverse(estimate_a, estimate_b, &map_a, &map_b, inverse_variance)
}

/// Transform camera-frame rates to the inertial frame using an external
/// attitude reference (inertial-to-camera).
pub fn rates_to_inertial(rates: &AngularRates, attitude: &RotationMatrix) -> Vector3<f64> {
    attitude.inverse() * rates.as_vector()
}
