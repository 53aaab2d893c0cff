//! Deterministic 6D pose confidence regions from calibrated keypoint
//! predictions.
//!
//! The crate turns per-keypoint Gaussian predictions into pose uncertainty in
//! four steps:
//!
//! 1. [`conformal`] calibrates distribution-free 2D confidence balls around
//!    predicted keypoints from a held-out calibration split.
//! 2. [`pnp`] solves a single-shot robust weighted perspective-n-point
//!    problem with damped Gauss-Newton (no sampling, no RANSAC).
//! 3. [`ift`] differentiates the solver's stationarity condition with the
//!    implicit function theorem and pushes the keypoint uncertainty through
//!    to closed-form rotation and translation confidence ellipsoids.
//! 4. [`metrics`] scores coverage and region volume; [`sampler`] provides a
//!    sampling-plus-convex-hull baseline to compare against.
//!
//! [`synth`] generates reproducible synthetic scenes so the whole pipeline
//! runs without any dataset or network, [`files`] defines the on-disk
//! dataset/calibration/report formats, and [`pipeline`] wires everything
//! into the `generate`/`calibrate`/`evaluate` commands exposed by the
//! `confpose` binary.
//!
//! Angles are Euler yaw-pitch-roll in the intrinsic Z-Y-X convention,
//! translations are in meters, image coordinates in pixels. Rotation region
//! volumes are reported in degrees cubed, translation volumes in cubic
//! meters.

pub mod conformal;
pub mod files;
pub mod geometry;
pub mod ift;
pub mod metrics;
pub mod pipeline;
pub mod pnp;
pub mod sampler;
pub mod synth;

pub use conformal::{CalibrationModel, KeypointConfidenceRegion};
pub use geometry::{
    CameraIntrinsics, Ellipsoid3, GaussianKeypoint, GaussianKeypointSet, ObjectModel, Pose6D,
};
pub use ift::{KeypointCovariance, PoseConfidenceRegion, PoseCovariance};
pub use metrics::{EvaluationReport, Thresholds};
pub use pnp::{PnPProblem, PnPSolution, SolverConfig};
pub use sampler::SampledPoseRegion;
pub use synth::{SceneConfig, SyntheticDataset, SyntheticSample};
