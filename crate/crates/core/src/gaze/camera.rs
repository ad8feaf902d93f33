use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics; lens distortion is modeled as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
}

impl CameraIntrinsics {
    /// Focal length equal to the image width, principal point at the center.
    pub fn uncalibrated(width: f64, height: f64) -> Self {
        CameraIntrinsics {
            focal_x: width,
            focal_y: width,
            principal_x: width / 2.0,
            principal_y: height / 2.0,
        }
    }

    pub fn validate(&self, width: f64, height: f64) -> Result<()> {
        if !(self.focal_x > 0.0 && self.focal_x.is_finite()) {
            return Err(Error::invalid("focal_x", "must be > 0"));
        }
        if !(self.focal_y > 0.0 && self.focal_y.is_finite()) {
            return Err(Error::invalid("focal_y", "must be > 0"));
        }
        if !(0.0..=width).contains(&self.principal_x) || !(0.0..=height).contains(&self.principal_y) {
            return Err(Error::invalid(
                "principal_x",
                format!(
                    "principal point ({}, {}) outside the {width}x{height} frame",
                    self.principal_x, self.principal_y
                ),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(
            self.focal_x,
            0.0,
            self.principal_x,
            0.0,
            self.focal_y,
            self.principal_y,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Rigid head pose in camera coordinates: `x_cam = R * X + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation vector (radians).
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        let r = UnitQuaternion::from_rotation_matrix(&rotation).scaled_axis();
        Pose {
            rotation: [r.x, r.y, r.z],
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rotation))
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn transform(&self, point: &[f64; 3]) -> Vector3<f64> {
        self.rotation() * Vector3::from(*point) + self.translation()
    }

    /// Angle of the relative rotation between two poses.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        let a = UnitQuaternion::from_scaled_axis(Vector3::from(self.rotation));
        let b = UnitQuaternion::from_scaled_axis(Vector3::from(other.rotation));
        a.angle_to(&b)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(&self.translation).all(|v| v.is_finite())
    }
}

/// Pinhole projection of a camera-frame point.
pub(crate) fn project_camera_point(k: &CameraIntrinsics, p: &Vector3<f64>) -> [f64; 2] {
    [
        k.focal_x * p.x / p.z + k.principal_x,
        k.focal_y * p.y / p.z + k.principal_y,
    ]
}

/// Projects a model-frame point to pixel coordinates.
pub fn project_point(pose: &Pose, k: &CameraIntrinsics, point: &[f64; 3]) -> Result<[f64; 2]> {
    let p = pose.transform(point);
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(project_camera_point(k, &p))
}
