//! Engagement analytics for presentation-style online lectures.
//!
//! The pipeline extracts fixation target events from the presentation video
//! (background subtraction followed by a spatio-temporal threshold), then runs a
//! three-stage cascade for every student and event:
//!
//! 1. visual presence: was the student's face on camera?
//! 2. contextual presence: did the student's screen show the lecture?
//! 3. cognitive presence: did the student's horizontal gazing energy match the
//!    instructor's (equal-mean t-test)?
//!
//! Per-segment current scores, aggregate scores and the instructor's
//! presentation score are produced offline ([`service::run_offline`]) or live
//! ([`service::live`]), where they are pushed to subscribers over a feed.

pub mod config;
pub mod error;
pub mod eval;
pub mod fixation;
pub mod foreground;
pub mod gaze;
pub mod ingest;
pub mod presence;
pub mod scoring;
pub mod segmentation;
pub mod service;
pub mod synth;

pub use config::SessionConfig;
pub use error::{Error, Result};
