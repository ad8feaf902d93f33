use nalgebra::{Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FaceFrameRecord, Landmarks};

/// 1-based landmark numbers of the pose points, in model order: the two eye
/// corners, the two lip corners, the nose end and the chin.
pub const POSE_LANDMARKS: [usize; 6] = [37, 46, 49, 55, 31, 9];

/// Index of the nose end within [`POSE_LANDMARKS`] / [`FaceModel3D`].
pub const NOSE_END: usize = 4;

/// Six rigid 3D face points matching [`POSE_LANDMARKS`], in a face-local frame
/// (x right, y down, z away from the camera for a frontal face).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaceModel3D(pub [[f64; 3]; 6]);

impl Default for FaceModel3D {
    /// Generic adult face in millimeters, nose end at the origin.
    fn default() -> Self {
        FaceModel3D([
            [-43.3, -32.7, 26.0],
            [43.3, -32.7, 26.0],
            [-28.9, 28.9, 24.1],
            [28.9, 28.9, 24.1],
            [0.0, 0.0, 0.0],
            [0.0, 63.6, 12.5],
        ])
    }
}

impl FaceModel3D {
    pub fn points(&self) -> &[[f64; 3]; 6] {
        &self.0
    }

    pub fn nose_end(&self) -> [f64; 3] {
        self.0[NOSE_END]
    }

    /// Unit vector pointing out of the face: the model's -z axis.
    pub fn forward(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -1.0)
    }

    /// Rejects coincident or coplanar point sets.
    pub fn validate(&self) -> Result<()> {
        let pts = &self.0;
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gaze.face_model", "points must be finite"));
        }
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                if d < 1e-12 {
                    return Err(Error::invalid(
                        "gaze.face_model",
                        format!("points {i} and {j} coincide"),
                    ));
                }
            }
        }
        let centroid = pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / 6.0;
        let centered = Matrix3xX::from_columns(
            &pts.iter()
                .map(|p| Vector3::from(*p) - centroid)
                .collect::<Vec<_>>(),
        );
        let sv = centered.singular_values();
        let max = sv.max();
        if sv.min() <= 1e-6 * max {
            return Err(Error::invalid("gaze.face_model", "points are coplanar"));
        }
        Ok(())
    }
}

/// Picks the six pose landmarks from a 68-point set, in model order.
pub fn select_candidate_landmarks(landmarks: &Landmarks) -> [[f64; 2]; 6] {
    POSE_LANDMARKS.map(|i| landmarks.point(i))
}

/// As [`select_candidate_landmarks`], for a face record that may lack landmarks.
pub fn candidate_landmarks(record: &FaceFrameRecord) -> Result<[[f64; 2]; 6]> {
    record
        .landmarks
        .as_ref()
        .map(select_candidate_landmarks)
        .ok_or(Error::NoLandmarks)
}
