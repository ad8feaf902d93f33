//! Cognitive presence: head pose from facial landmarks, horizontal projection
//! of the nose end, per-second gazing energies and the equal-mean t-test.

mod camera;
mod energy;
mod landmarks;
mod pnp;
mod ttest;

pub use camera::{project_point, CameraIntrinsics, Pose};
pub use energy::{gazing_energy, horizontal_series, EnergySeries, EnergyWindow, ProjectionSample};
pub use landmarks::{candidate_landmarks, select_candidate_landmarks, FaceModel3D, NOSE_END, POSE_LANDMARKS};
pub use pnp::{estimate_pose, refine_pose_lm, reprojection_cost, solve_pose_dlt, LmOptions, Refinement};
pub use ttest::{
    cognitive_presence, ln_gamma, regularized_incomplete_beta, student_t_two_sided_p, t_test_equal_mean,
    welch_t_test, TTestResult,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{GazeConfig, ParticipantConfig, TTestKind};
use crate::error::Result;
use crate::ingest::FaceFrameRecord;

/// What one face frame contributes downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub ts: u64,
    pub detected: bool,
    /// Horizontal projection; absent without landmarks or a usable pose.
    pub x: Option<f64>,
}

/// Per-participant camera geometry and options for turning landmarks into
/// horizontal projection samples.
#[derive(Debug, Clone)]
pub struct GazeProjector {
    model: FaceModel3D,
    camera: CameraIntrinsics,
    lm: LmOptions,
    target: [f64; 3],
    width_divisor: f64,
}

impl GazeProjector {
    pub fn new(gaze: &GazeConfig, participant: &ParticipantConfig) -> Self {
        let model = gaze.face_model;
        let nose = Vector3::from(model.nose_end());
        let target = nose + model.forward() * gaze.gaze_ray_length;
        GazeProjector {
            model,
            camera: participant.camera(),
            lm: gaze.lm_options(),
            target: [target.x, target.y, target.z],
            width_divisor: if gaze.normalize_horizontal {
                participant.camera_width as f64
            } else {
                1.0
            },
        }
    }

    pub fn camera(&self) -> &CameraIntrinsics {
        &self.camera
    }

    /// Pixel projection of the gaze point for a six-landmark set.
    pub fn project(&self, six: &[[f64; 2]; 6]) -> Result<[f64; 2]> {
        let refined = estimate_pose(six, &self.model, &self.camera, &self.lm)?;
        project_point(&refined.pose, &self.camera, &self.target)
    }

    pub fn observe(&self, record: &FaceFrameRecord) -> FaceObservation {
        let x = record
            .landmarks
            .as_ref()
            .filter(|_| record.face_detected)
            .and_then(|lm| self.project(&select_candidate_landmarks(lm)).ok())
            .map(|p| p[0] / self.width_divisor)
            .filter(|x| x.is_finite());
        FaceObservation {
            ts: record.ts,
            detected: record.face_detected,
            x,
        }
    }
}

/// Runs the configured two-sample test.
pub fn compare_energies(kind: TTestKind, instructor: &[f64], student: &[f64]) -> Result<TTestResult> {
    match kind {
        TTestKind::Student => t_test_equal_mean(instructor, student),
        TTestKind::Welch => welch_t_test(instructor, student),
    }
}
