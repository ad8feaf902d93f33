//! Session configuration (`session.cfg`, TOML).
//!
//! Every section and key is optional; missing values take the defaults listed on
//! the corresponding `Default` impls. [`SessionConfig::validate`] enforces the
//! cross-field invariants and names the offending key on failure.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foreground::GmmParams;
use crate::gaze::{CameraIntrinsics, FaceModel3D, LmOptions};
use crate::presence::ChiSquareVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Instructor,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantConfig {
    pub id: String,
    pub role: Role,
    #[serde(default = "default_camera_width")]
    pub camera_width: u32,
    #[serde(default = "default_camera_height")]
    pub camera_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
}

fn default_camera_width() -> u32 {
    640
}

fn default_camera_height() -> u32 {
    480
}

impl ParticipantConfig {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        ParticipantConfig {
            id: id.into(),
            role,
            camera_width: default_camera_width(),
            camera_height: default_camera_height(),
            intrinsics: None,
        }
    }

    /// Configured intrinsics, or the uncalibrated-webcam approximation
    /// (focal length = image width, principal point at the image center).
    pub fn camera(&self) -> CameraIntrinsics {
        self.intrinsics.unwrap_or_else(|| {
            CameraIntrinsics::uncalibrated(self.camera_width as f64, self.camera_height as f64)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForegroundConfig {
    pub components: usize,
    pub learning_rate: f64,
    pub background_fraction: f64,
    pub match_threshold: f64,
    pub variance_init: f64,
    pub variance_floor: f64,
    pub seed_first_frame: bool,
    pub median_kernel: usize,
}

impl Default for ForegroundConfig {
    fn default() -> Self {
        let g = GmmParams::default();
        ForegroundConfig {
            components: g.components,
            learning_rate: g.learning_rate,
            background_fraction: g.background_fraction,
            match_threshold: g.match_threshold,
            variance_init: g.variance_init,
            variance_floor: g.variance_floor,
            seed_first_frame: g.seed_first_frame,
            median_kernel: 3,
        }
    }
}

impl ForegroundConfig {
    pub fn gmm(&self) -> GmmParams {
        GmmParams {
            components: self.components,
            learning_rate: self.learning_rate,
            background_fraction: self.background_fraction,
            match_threshold: self.match_threshold,
            variance_init: self.variance_init,
            variance_floor: self.variance_floor,
            seed_first_frame: self.seed_first_frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixationConfig {
    pub spatial_min_fraction: f64,
    pub spatial_max_fraction: f64,
    /// Temporal threshold in frames; defaults to two seconds of frames.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_event_frames: Option<u32>,
    /// Student/instructor event matching tolerance; defaults to three seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_tolerance_frames: Option<u32>,
}

impl Default for FixationConfig {
    fn default() -> Self {
        FixationConfig {
            spatial_min_fraction: 0.005,
            spatial_max_fraction: 0.20,
            min_event_frames: None,
            match_tolerance_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    /// Leading frames of each event compared between screens.
    pub frames: usize,
    pub bins: usize,
    /// Maximum chi-square distance for contextual presence.
    pub threshold: f64,
    /// Minimum face-detected fraction for visual presence.
    pub visual_fraction: f64,
    pub chi_square: ChiSquareVariant,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            frames: 5,
            bins: 32,
            threshold: 0.25,
            visual_fraction: 0.5,
            chi_square: ChiSquareVariant::Symmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    Student,
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeConfig {
    pub significance_level: f64,
    pub test: TTestKind,
    /// Divide horizontal projections by the camera frame width.
    pub normalize_horizontal: bool,
    /// Distance along the face-forward axis of the projected point; 0 projects
    /// the nose end itself.
    pub gaze_ray_length: f64,
    pub lm_max_iter: usize,
    pub lm_lambda0: f64,
    pub lm_tol: f64,
    pub face_model: FaceModel3D,
}

impl Default for GazeConfig {
    fn default() -> Self {
        let lm = LmOptions::default();
        GazeConfig {
            significance_level: 0.001,
            test: TTestKind::Student,
            normalize_horizontal: true,
            gaze_ray_length: 0.0,
            lm_max_iter: lm.max_iter,
            lm_lambda0: lm.lambda0,
            lm_tol: lm.tol,
            face_model: FaceModel3D::default(),
        }
    }
}

impl GazeConfig {
    pub fn lm_options(&self) -> LmOptions {
        LmOptions {
            max_iter: self.lm_max_iter,
            lambda0: self.lm_lambda0,
            tol: self.lm_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Automatic,
    Manual,
}

/// Allowed manual slice lengths, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum SliceLength {
    Three,
    Five,
    Fifteen,
}

impl SliceLength {
    pub fn minutes(self) -> u32 {
        match self {
            SliceLength::Three => 3,
            SliceLength::Five => 5,
            SliceLength::Fifteen => 15,
        }
    }

    pub fn frames(self, fps: u32) -> u64 {
        self.minutes() as u64 * 60 * fps as u64
    }
}

impl TryFrom<u32> for SliceLength {
    type Error = String;

    fn try_from(minutes: u32) -> Result<Self, String> {
        match minutes {
            3 => Ok(SliceLength::Three),
            5 => Ok(SliceLength::Five),
            15 => Ok(SliceLength::Fifteen),
            other => Err(format!("slice must be 3, 5 or 15 minutes, got {other}")),
        }
    }
}

impl From<SliceLength> for u32 {
    fn from(s: SliceLength) -> u32 {
        s.minutes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SegmentMode {
    Automatic,
    Manual { slice: SliceLength },
}

impl SegmentMode {
    pub fn kind(&self) -> ModeKind {
        match self {
            SegmentMode::Automatic => ModeKind::Automatic,
            SegmentMode::Manual { .. } => ModeKind::Manual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub mode: ModeKind,
    pub slice_minutes: u32,
    /// MSE threshold on 0-255 intensities for slide-number transitions.
    pub mse_threshold: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            mode: ModeKind::Automatic,
            slice_minutes: 5,
            mse_threshold: 100.0,
        }
    }
}

impl SegmentationConfig {
    pub fn segment_mode(&self) -> Result<SegmentMode> {
        match self.mode {
            ModeKind::Automatic => Ok(SegmentMode::Automatic),
            ModeKind::Manual => Ok(SegmentMode::Manual {
                slice: SliceLength::try_from(self.slice_minutes)
                    .map_err(|e| Error::invalid("segmentation.slice_minutes", e))?,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsufficientDataPolicy {
    /// Drop the event from that student's denominator.
    Exclude,
    /// Count the event as non-engaged.
    NonEngaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub insufficient_data: InsufficientDataPolicy,
    /// Current score (percent) at or above which a segment counts as engaged
    /// when scorecards are turned into binary predictions.
    pub engaged_cutoff: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            insufficient_data: InsufficientDataPolicy::Exclude,
            engaged_cutoff: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub fps: u32,
    pub foreground: ForegroundConfig,
    pub fixation: FixationConfig,
    pub context: ContextConfig,
    pub gaze: GazeConfig,
    pub segmentation: SegmentationConfig,
    pub scoring: ScoringConfig,
    #[serde(rename = "participant")]
    pub participants: Vec<ParticipantConfig>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            fps: 30,
            foreground: ForegroundConfig::default(),
            fixation: FixationConfig::default(),
            context: ContextConfig::default(),
            gaze: GazeConfig::default(),
            segmentation: SegmentationConfig::default(),
            scoring: ScoringConfig::default(),
            participants: Vec::new(),
        }
    }
}

/// Reads, default-fills and validates a session configuration file.
pub fn load_session_config(path: impl AsRef<Path>) -> Result<SessionConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SessionConfig::from_toml(&text)
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<SessionConfig> {
        let config: SessionConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn min_event_frames(&self) -> u32 {
        self.fixation.min_event_frames.unwrap_or(2 * self.fps)
    }

    pub fn match_tolerance_frames(&self) -> u32 {
        self.fixation.match_tolerance_frames.unwrap_or(3 * self.fps)
    }

    pub fn segment_mode(&self) -> Result<SegmentMode> {
        self.segmentation.segment_mode()
    }

    pub fn instructor(&self) -> Option<&ParticipantConfig> {
        self.participants
            .iter()
            .find(|p| p.role == Role::Instructor)
    }

    pub fn students(&self) -> impl Iterator<Item = &ParticipantConfig> {
        self.participants.iter().filter(|p| p.role == Role::Student)
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be > 0, got {v}")))
            }
        }

        if self.fps == 0 {
            return Err(Error::invalid("fps", "must be > 0"));
        }
        self.foreground.gmm().validate()?;
        let k = self.foreground.median_kernel;
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::invalid(
                "foreground.median_kernel",
                format!("must be odd and >= 1, got {k}"),
            ));
        }

        let fx = &self.fixation;
        positive("fixation.spatial_min_fraction", fx.spatial_min_fraction)?;
        positive("fixation.spatial_max_fraction", fx.spatial_max_fraction)?;
        if fx.spatial_min_fraction >= fx.spatial_max_fraction {
            return Err(Error::invalid(
                "fixation.spatial_min_fraction",
                "spatial_min_fraction < spatial_max_fraction violated",
            ));
        }
        if fx.spatial_max_fraction > 1.0 {
            return Err(Error::invalid(
                "fixation.spatial_max_fraction",
                "must not exceed the frame area (1.0)",
            ));
        }
        if self.min_event_frames() == 0 {
            return Err(Error::invalid("fixation.min_event_frames", "must be >= 1"));
        }
        if self.match_tolerance_frames() == 0 {
            return Err(Error::invalid(
                "fixation.match_tolerance_frames",
                "must be >= 1",
            ));
        }

        let cx = &self.context;
        if cx.frames == 0 {
            return Err(Error::invalid("context.frames", "must be >= 1"));
        }
        if cx.bins == 0 || 256 % cx.bins != 0 {
            return Err(Error::invalid(
                "context.bins",
                format!("must divide 256, got {}", cx.bins),
            ));
        }
        positive("context.threshold", cx.threshold)?;
        positive("context.visual_fraction", cx.visual_fraction)?;
        if cx.visual_fraction > 1.0 {
            return Err(Error::invalid("context.visual_fraction", "must be <= 1"));
        }

        let gz = &self.gaze;
        if !(gz.significance_level > 0.0 && gz.significance_level < 1.0) {
            return Err(Error::invalid(
                "gaze.significance_level",
                format!("must lie in (0, 1), got {}", gz.significance_level),
            ));
        }
        if gz.gaze_ray_length < 0.0 || !gz.gaze_ray_length.is_finite() {
            return Err(Error::invalid("gaze.gaze_ray_length", "must be >= 0"));
        }
        if gz.lm_max_iter == 0 {
            return Err(Error::invalid("gaze.lm_max_iter", "must be >= 1"));
        }
        positive("gaze.lm_lambda0", gz.lm_lambda0)?;
        positive("gaze.lm_tol", gz.lm_tol)?;
        gz.face_model.validate()?;

        positive("segmentation.mse_threshold", self.segmentation.mse_threshold)?;
        self.segmentation.segment_mode()?;
        positive("scoring.engaged_cutoff", self.scoring.engaged_cutoff)?;

        self.validate_participants()
    }

    fn validate_participants(&self) -> Result<()> {
        if self.participants.is_empty() {
            return Ok(());
        }
        let mut seen = HashSet::new();
        for p in &self.participants {
            if p.id.is_empty() || p.id.contains(['/', '\\']) {
                return Err(Error::invalid(
                    "participant.id",
                    format!("invalid participant id {:?}", p.id),
                ));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(Error::invalid(
                    "participant.id",
                    format!("duplicate participant id {:?}", p.id),
                ));
            }
            if p.camera_width == 0 || p.camera_height == 0 {
                return Err(Error::invalid(
                    "participant.camera_width",
                    format!("participant {}: camera size must be non-zero", p.id),
                ));
            }
            if let Some(k) = &p.intrinsics {
                k.validate(p.camera_width as f64, p.camera_height as f64)
                    .map_err(|e| match e {
                        Error::Invalid { field, reason } => Error::Invalid {
                            field: format!("participant.intrinsics.{field}"),
                            reason: format!("participant {}: {reason}", p.id),
                        },
                        other => other,
                    })?;
            }
        }
        let instructors = self
            .participants
            .iter()
            .filter(|p| p.role == Role::Instructor)
            .count();
        if instructors != 1 {
            return Err(Error::invalid(
                "participant.role",
                format!("exactly one instructor required, found {instructors}"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = SessionConfig::from_toml("fps = 30\n").unwrap();
        assert_eq!(cfg.fps, 30);
        assert_eq!(cfg.foreground.gmm(), GmmParams::default());
        assert_eq!(cfg.foreground.median_kernel, 3);
        assert_eq!(cfg.fixation.spatial_min_fraction, 0.005);
        assert_eq!(cfg.fixation.spatial_max_fraction, 0.20);
        assert_eq!(cfg.min_event_frames(), 60);
        assert_eq!(cfg.match_tolerance_frames(), 90);
        assert_eq!(cfg.context.frames, 5);
        assert_eq!(cfg.context.bins, 32);
        assert_eq!(cfg.context.threshold, 0.25);
        assert_eq!(cfg.context.visual_fraction, 0.5);
        assert_eq!(cfg.gaze.significance_level, 0.001);
        assert_eq!(cfg.segmentation.mse_threshold, 100.0);
        assert_eq!(cfg.segment_mode().unwrap(), SegmentMode::Automatic);
    }

    #[test]
    fn inverted_spatial_thresholds_rejected() {
        let err = SessionConfig::from_toml(
            "[fixation]\nspatial_min_fraction = 0.3\nspatial_max_fraction = 0.1\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("spatial_min_fraction < spatial_max_fraction violated"), "{msg}");
    }

    #[test]
    fn alpha_and_slice_echoed() {
        let cfg = SessionConfig::from_toml(
            "[gaze]\nsignificance_level = 0.001\n[segmentation]\nmode = \"manual\"\nslice_minutes = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.gaze.significance_level, 0.001);
        assert_eq!(
            cfg.segment_mode().unwrap(),
            SegmentMode::Manual {
                slice: SliceLength::Five
            }
        );
    }

    #[test]
    fn bad_slice_and_alpha_rejected() {
        let err = SessionConfig::from_toml(
            "[segmentation]\nmode = \"manual\"\nslice_minutes = 7\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("slice_minutes"));
        let err = SessionConfig::from_toml("[gaze]\nsignificance_level = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("significance_level"));
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        assert!(matches!(
            SessionConfig::from_toml("fsp = 30\n"),
            Err(Error::ConfigParse(_))
        ));
    }

    #[test]
    fn participants_need_one_instructor() {
        let text = "[[participant]]\nid = \"a\"\nrole = \"student\"\n";
        let err = SessionConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("exactly one instructor"));

        let text = "[[participant]]\nid = \"i\"\nrole = \"instructor\"\n[[participant]]\nid = \"i\"\nrole = \"student\"\n";
        let err = SessionConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = SessionConfig::default();
        cfg.participants.push(ParticipantConfig::new("I", Role::Instructor));
        cfg.participants.push(ParticipantConfig::new("S1", Role::Student));
        cfg.segmentation.mode = ModeKind::Manual;
        cfg.segmentation.slice_minutes = 15;
        let back = SessionConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
