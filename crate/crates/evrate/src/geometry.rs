//! Reference-frame rotations, Euler-angle conversions, and pinhole projection.
//!
//! Conventions used throughout the crate:
//!
//! * Attitudes are direction cosine matrices mapping inertial coordinates to
//!   camera coordinates: `v_cam = R * v_inertial`.
//! * The camera boresight is the +Z axis of the camera frame.
//! * Focal-plane coordinates are continuous, in pixel units, with the origin
//!   at the optical center, +x right and +y down. Conversion to array indices
//!   happens only at rasterization time.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Proper rotation (orthonormal, det +1). `v_cam = R * v_inertial` for
/// attitude matrices.
pub type RotationMatrix = Rotation3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (Z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
}

/// Rotation order for Euler-angle composition. The angle triplet is always
/// (yaw about the 3-axis, pitch about the 2-axis, roll about the 1-axis);
/// the sequence controls the order in which they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EulerSequence {
    /// Yaw, then pitch, then roll (aerospace 3-2-1).
    Zyx,
    /// Roll, then pitch, then yaw (1-2-3).
    Xyz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    /// Rotation about the 3-axis, radians.
    pub yaw: f64,
    /// Rotation about the 2-axis, radians.
    pub pitch: f64,
    /// Rotation about the 1-axis, radians.
    pub roll: f64,
    pub sequence: EulerSequence,
}

impl EulerAngles {
    pub fn zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll, sequence: EulerSequence::Zyx }
    }
}

/// Compose the active rotation realizing the given Euler sequence.
///
/// For `Zyx` the result is `R3(yaw) * R2(pitch) * R1(roll)`, so a pure yaw of
/// +90 deg maps the 1-axis onto the 2-axis.
pub fn rotation_from_euler(angles: &EulerAngles) -> RotationMatrix {
    let r1 = Rotation3::from_axis_angle(&Vector3::x_axis(), angles.roll);
    let r2 = Rotation3::from_axis_angle(&Vector3::y_axis(), angles.pitch);
    let r3 = Rotation3::from_axis_angle(&Vector3::z_axis(), angles.yaw);
    match angles.sequence {
        EulerSequence::Zyx => r3 * r2 * r1,
        EulerSequence::Xyz => r1 * r2 * r3,
    }
}

/// Unit vector on the celestial sphere for right ascension `alpha` and
/// declination `delta` (radians).
pub fn radec_unit(alpha: f64, delta: f64) -> Vector3<f64> {
    Vector3::new(
        delta.cos() * alpha.cos(),
        delta.cos() * alpha.sin(),
        delta.sin(),
    )
}

/// Attitude (inertial -> camera) whose boresight points at (`alpha_b`,
/// `delta_b`), with `roll_about_boresight` fixing the remaining degree of
/// freedom.
///
/// At zero roll the camera +x axis lies along the local "east" direction
/// (`z_hat x boresight`). For a boresight at either celestial pole that
/// reference degenerates and the inertial 1-axis is used instead.
pub fn boresight_attitude(
    alpha_b: f64,
    delta_b: f64,
    roll_about_boresight: f64,
) -> RotationMatrix {
    let bore = radec_unit(alpha_b, delta_b);
    let reference = if bore.z.abs() > 1.0 - 1e-9 {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let e1 = reference.cross(&bore).normalize();
    let e2 = bore.cross(&e1);
    let (s, c) = roll_about_boresight.sin_cos();
    let c1 = c * e1 + s * e2;
    let c2 = -s * e1 + c * e2;
    // Rows are the camera basis vectors expressed in inertial coordinates.
    let m = Matrix3::from_rows(&[c1.transpose(), c2.transpose(), bore.transpose()]);
    Rotation3::from_matrix_unchecked(m)
}

/// Pinhole + sensor + event-threshold parameters.
///
/// The focal length is expressed in pixel units, so projection yields pixel
/// coordinates directly; the field of view is derived from `(f, W, H)` rather
/// than stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length in pixel units.
    pub focal_length: f64,
    /// Sensor width in pixels.
    pub width: u32,
    /// Sensor height in pixels.
    pub height: u32,
    /// Faintest visual magnitude the sensor responds to.
    pub limit_magnitude: f64,
    /// Event threshold in log-intensity units.
    pub event_threshold: f64,
}

impl CameraModel {
    pub fn new(
        focal_length: f64,
        width: u32,
        height: u32,
        limit_magnitude: f64,
        event_threshold: f64,
    ) -> Result<Self, GeometryError> {
        let cam = Self { focal_length, width, height, limit_magnitude, event_threshold };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_length > 0.0) || !self.focal_length.is_finite() {
            return Err(GeometryError::InvalidCamera(format!(
                "focal length must be positive and finite, got {}",
                self.focal_length
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(GeometryError::InvalidCamera(format!(
                "sensor must be at least 16x16 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.event_threshold > 0.0) || !self.event_threshold.is_finite() {
            return Err(GeometryError::InvalidCamera(format!(
                "event threshold must be positive, got {}",
                self.event_threshold
            )));
        }
        if !self.limit_magnitude.is_finite() {
            return Err(GeometryError::InvalidCamera("limit magnitude must be finite".into()));
        }
        Ok(())
    }

    /// Field of view (horizontal, vertical) in radians.
    pub fn fov(&self) -> (f64, f64) {
        (
            2.0 * (f64::from(self.width) / (2.0 * self.focal_length)).atan(),
            2.0 * (f64::from(self.height) / (2.0 * self.focal_length)).atan(),
        )
    }

    /// Half-angle of the cone circumscribing the sensor, radians.
    pub fn half_diagonal(&self) -> f64 {
        let half_diag_px = 0.5
            * (f64::from(self.width).powi(2) + f64::from(self.height).powi(2)).sqrt();
        (half_diag_px / self.focal_length).atan()
    }

    /// Whether a focal-plane point (centered coordinates) lies on the sensor.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= f64::from(self.width) / 2.0 && y.abs() <= f64::from(self.height) / 2.0
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Continuous focal-plane position in pixel units, origin at the optical
/// center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalPlanePoint {
    pub x: f64,
    pub y: f64,
    /// True when the point falls inside the sensor bounds.
    pub on_sensor: bool,
}

/// Project a camera-frame direction through the pinhole model:
/// `x = f X / Z`, `y = f Y / Z`.
pub fn project_pinhole(
    v_cam: &Vector3<f64>,
    camera: &CameraModel,
) -> Result<FocalPlanePoint, GeometryError> {
    if v_cam.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: v_cam.z });
    }
    let x = camera.focal_length * v_cam.x / v_cam.z;
    let y = camera.focal_length * v_cam.y / v_cam.z;
    Ok(FocalPlanePoint { x, y, on_sensor: camera.contains(x, y) })
}

/// Maximum orthonormality defect `max|R^T R - I|`, used by tests and
/// validation paths.
pub fn orthonormality_defect(r: &RotationMatrix) -> f64 {
    let m = r.matrix();
    let d = m.transpose() * m - Matrix3::identity();
    d.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
