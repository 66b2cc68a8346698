//! Offline video-oculography analysis toolkit.
//!
//! Detects pupil, first (P1) and fourth (P4) Purkinje images in grayscale
//! eye frames, builds raw VOG (pupil - P1) and modeled dual-Purkinje
//! (P1 - P4) gaze signals, fits per-axis polynomial calibration, and
//! computes the standard eye-tracking data-quality metrics. A synthetic
//! eye-frame renderer with exact ground truth serves as the built-in
//! verification oracle.

pub mod cli;
pub mod features;
pub mod gaze;
pub mod metrics;
pub mod rng;
pub mod stimgen;
pub mod store;
pub mod synthcam;
