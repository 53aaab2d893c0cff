//! Reproducible synthetic scenes: a random rigid model observed by a fixed
//! pinhole camera under random poses, with Gaussian keypoint predictions
//! whose stated covariance can deliberately misreport the actual noise.
//!
//! Determinism and split hygiene: one ChaCha8 generator seeded by the
//! config drives everything, but each consumer gets its own stream —
//! stream 0 generates the model, stream `1 + first_index + i` generates
//! sample `i`. Datasets produced with different `first_index` offsets are
//! therefore disjoint, exchangeable draws from the same distribution over
//! the same model, which is what calibration/evaluation splits require.
//!
//! The covariance misspecification factor is the ratio of actual noise
//! variance to the stated covariance: the per-keypoint noise is drawn with
//! standard deviation `sigma_n * sqrt(cov_misspecification)` while the
//! prediction still claims `sigma_n^2 I`. Factors above one make the
//! predictions overconfident, which collapses raw Gaussian coverage but
//! leaves conformally calibrated coverage intact.

use crate::geometry::{
    project, CameraIntrinsics, GaussianKeypoint, GaussianKeypointSet, GeometryError,
    ObjectModel, Pose6D,
};
use crate::pnp::{PnPError, PnPProblem};
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square image in pixels.
pub const FRAME_SIZE: f64 = 1024.0;
/// Keypoints must project at least this many pixels inside the frame.
pub const FRAME_MARGIN: f64 = 1.0;
/// Total pose redraws allowed per generation call before giving up.
pub const REJECTION_BUDGET: usize = 10_000;
/// Stated covariances are floored at this variance so that noise-free
/// configurations still produce positive-definite predictions.
pub const MIN_PREDICTED_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {reason}")]
    InvalidConfig { reason: String },
    #[error(
        "pose rejection budget exhausted after {budget} redraws; \
         the configuration leaves (almost) no fully visible poses"
    )]
    GenerationExhausted { budget: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The fixed camera all synthetic scenes share.
pub fn fixed_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(1000.0, 1000.0, 512.0, 512.0).expect("constants are valid")
}

/// Diagonal of the image frame in pixels, the cap for conformal radii.
pub fn frame_diagonal() -> f64 {
    (2.0 * FRAME_SIZE * FRAME_SIZE).sqrt()
}

/// Scene distribution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Number of model keypoints (at least 4).
    pub n_keypoints: usize,
    /// Side length of the cube the model points are drawn from (meters).
    pub model_extent: f64,
    /// Depth range for the object center (meters, min < max, min > 0).
    pub depth_range: (f64, f64),
    /// Per-axis Euler angle ranges are `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
    /// Range the per-keypoint stated noise std is drawn from (pixels).
    pub noise_std_range: (f64, f64),
    /// Ratio of actual noise variance to stated covariance (1 = faithful).
    pub cov_misspecification: f64,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_keypoints: 11,
            model_extent: 0.5,
            depth_range: (2.0, 6.0),
            max_rotation_deg: 60.0,
            noise_std_range: (0.3, 2.0),
            cov_misspecification: 1.0,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: String| Err(SynthError::InvalidConfig { reason });
        if self.n_keypoints < 4 {
            return fail(format!("n_keypoints = {} but at least 4 are needed", self.n_keypoints));
        }
        if !(self.model_extent.is_finite() && self.model_extent > 0.0) {
            return fail(format!("model_extent = {} must be positive", self.model_extent));
        }
        let (dlo, dhi) = self.depth_range;
        if !(dlo.is_finite() && dhi.is_finite() && dlo > 0.0 && dlo < dhi) {
            return fail(format!("depth_range = ({dlo}, {dhi}) must satisfy 0 < min < max"));
        }
        if !(self.max_rotation_deg.is_finite()
            && self.max_rotation_deg > 0.0
            && self.max_rotation_deg < 90.0)
        {
            return fail(format!(
                "max_rotation_deg = {} must lie in (0, 90)",
                self.max_rotation_deg
            ));
        }
        let (nlo, nhi) = self.noise_std_range;
        if !(nlo.is_finite() && nhi.is_finite() && nlo >= 0.0 && nlo <= nhi) {
            return fail(format!(
                "noise_std_range = ({nlo}, {nhi}) must satisfy 0 <= min <= max"
            ));
        }
        if !(self.cov_misspecification.is_finite() && self.cov_misspecification > 0.0) {
            return fail(format!(
                "cov_misspecification = {} must be positive",
                self.cov_misspecification
            ));
        }
        Ok(())
    }
}

/// One scene: the true pose, its exact projections, and the noisy
/// prediction the estimators actually see.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub gt_pose: Pose6D,
    /// Exact projections of the model under `gt_pose` (pixels).
    pub gt_keypoints2d: Vec<Vector2<f64>>,
    /// Noisy means with stated (possibly misspecified) covariances.
    pub predicted: GaussianKeypointSet,
}

/// A batch of samples sharing one camera and one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SceneConfig,
    /// Global index of the first sample (stream offset; see module docs).
    pub first_index: usize,
    pub cam: CameraIntrinsics,
    pub model: ObjectModel,
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The pose estimation problem for sample `i`.
    pub fn problem(&self, i: usize) -> Result<PnPProblem, PnPError> {
        PnPProblem::new(self.model.clone(), self.samples[i].predicted.clone(), self.cam)
    }
}

/// `generate_offset` starting at global sample index 0.
pub fn generate(config: &SceneConfig, count: usize) -> Result<SyntheticDataset, SynthError> {
    generate_offset(config, 0, count)
}

/// Generates `count` samples with global indices `first_index ..`.
///
/// Calling this twice with consecutive index ranges yields exactly the
/// samples a single larger call would have produced, over the same model,
/// so calibration and evaluation splits stay disjoint and exchangeable.
pub fn generate_offset(
    config: &SceneConfig,
    first_index: usize,
    count: usize,
) -> Result<SyntheticDataset, SynthError> {
    config.validate()?;
    if count == 0 {
        return Err(SynthError::InvalidConfig { reason: "count must be at least 1".into() });
    }

    let cam = fixed_camera();
    let model = generate_model(config)?;
    let mut budget = REJECTION_BUDGET;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(1 + (first_index + i) as u64);
        samples.push(generate_sample(config, &cam, &model, &mut rng, &mut budget)?);
    }
    Ok(SyntheticDataset { config: config.clone(), first_index, cam, model, samples })
}

/// Model points drawn uniformly from the centered cube on stream 0.
fn generate_model(config: &SceneConfig) -> Result<ObjectModel, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(0);
    let h = config.model_extent / 2.0;
    // A degenerate (rank-deficient) draw is measure-zero; retry a few
    // times instead of failing outright.
    for _ in 0..100 {
        let points: Vec<Vector3<f64>> = (0..config.n_keypoints)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-h..=h),
                    rng.gen_range(-h..=h),
                    rng.gen_range(-h..=h),
                )
            })
            .collect();
        if let Ok(model) = ObjectModel::new(points) {
            return Ok(model);
        }
    }
    Err(SynthError::InvalidConfig {
        reason: "could not draw a full-rank model (extent too small?)".into(),
    })
}

fn generate_sample(
    config: &SceneConfig,
    cam: &CameraIntrinsics,
    model: &ObjectModel,
    rng: &mut ChaCha8Rng,
    budget: &mut usize,
) -> Result<SyntheticSample, SynthError> {
    let max_rot = config.max_rotation_deg.to_radians();
    let (dlo, dhi) = config.depth_range;
    let (gt_pose, gt_keypoints2d) = loop {
        let euler = Vector3::new(
            rng.gen_range(-max_rot..=max_rot),
            rng.gen_range(-max_rot..=max_rot),
            rng.gen_range(-max_rot..=max_rot),
        );
        let tz = rng.gen_range(dlo..=dhi);
        let lateral_x = 0.4 * tz * (cam.cx / cam.fx);
        let lateral_y = 0.4 * tz * (cam.cy / cam.fy);
        let translation = Vector3::new(
            rng.gen_range(-lateral_x..=lateral_x),
            rng.gen_range(-lateral_y..=lateral_y),
            tz,
        );
        let pose = Pose6D { euler, translation };
        if let Some(pix) = project_all_visible(model, &pose, cam) {
            break (pose, pix);
        }
        if *budget == 0 {
            return Err(SynthError::GenerationExhausted { budget: REJECTION_BUDGET });
        }
        *budget -= 1;
    };

    let noise_scale = config.cov_misspecification.sqrt();
    let (nlo, nhi) = config.noise_std_range;
    let keypoints: Vec<GaussianKeypoint> = gt_keypoints2d
        .iter()
        .map(|gt| {
            let sigma = rng.gen_range(nlo..=nhi);
            let actual_std = sigma * noise_scale;
            let noise = Vector2::new(
                actual_std * rng.sample::<f64, _>(StandardNormal),
                actual_std * rng.sample::<f64, _>(StandardNormal),
            );
            let stated = (sigma * sigma).max(MIN_PREDICTED_VARIANCE);
            GaussianKeypoint::new(gt + noise, Matrix2::identity() * stated)
                .expect("floored isotropic covariance is positive definite")
        })
        .collect();
    let predicted = GaussianKeypointSet::new(keypoints)?;

    Ok(SyntheticSample { gt_pose, gt_keypoints2d, predicted })
}

/// Exact projections if every keypoint lands inside the frame margin.
fn project_all_visible(
    model: &ObjectModel,
    pose: &Pose6D,
    cam: &CameraIntrinsics,
) -> Option<Vec<Vector2<f64>>> {
    let lo = FRAME_MARGIN;
    let hi = FRAME_SIZE - FRAME_MARGIN;
    let mut pix = Vec::with_capacity(model.len());
    for p in &model.points3d {
        let q = project(p, pose, cam).ok()?;
        if !(q.x >= lo && q.x <= hi && q.y >= lo && q.y <= hi) {
            return None;
        }
        pix.push(q);
    }
    Some(pix)
}
