//! Inductive conformal calibration of 2D keypoint confidence regions.
//!
//! Every calibration image contributes one nonconformity score
//!
//! ```text
//! r_i = max_n ||gt_n - mean_n|| / s_n,      s_n = det(cov_n)^q
//! ```
//!
//! where `q` is the scale exponent (default 1/4, the geometric-mean standard
//! deviation of the predicted covariance, which makes the ratio
//! dimensionless). At miscoverage level `epsilon` the calibrated quantile is
//! the `floor(l * epsilon)`-th largest of the `l` calibration scores, and a
//! test image's region is one closed ball per keypoint with radius
//! `s_n * quantile`, capped at the image diagonal. Containment of all true
//! keypoints in their balls then holds with probability at least
//! `1 - epsilon` over exchangeable draws, regardless of whether the
//! predicted covariances are trustworthy.

use crate::geometry::{GaussianKeypoint, GaussianKeypointSet};
use nalgebra::Vector2;
use thiserror::Error;

/// Default exponent applied to `det(cov)`; 1/4 gives the geometric mean of
/// the per-axis standard deviations.
pub const DEFAULT_SCALE_EXPONENT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("keypoint covariance determinant {det:.3e} is not positive")]
    DegenerateCovariance { det: f64 },
    #[error("scale exponent must be finite and positive, got {0}")]
    InvalidScaleExponent(f64),
    #[error("ground truth has {gt} keypoints but prediction has {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("calibration sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<ConformalError>,
    },
    #[error("no calibration scores")]
    EmptyCalibration,
    #[error("calibration scores must be finite and non-negative")]
    InvalidScore,
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    InvalidEpsilon(f64),
    #[error("epsilon {epsilon} too small for {len} calibration scores (needs floor(l*eps) >= 1)")]
    EpsilonTooSmall { epsilon: f64, len: usize },
    #[error("image diagonal must be positive and finite, got {0}")]
    InvalidDiagonal(f64),
}

/// Frozen calibration state: scores sorted descending plus the scale
/// exponent they were computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    scores: Vec<f64>,
    pub scale_exponent: f64,
}

impl CalibrationModel {
    /// Builds a model from raw scores; sorts them descending.
    pub fn new(mut scores: Vec<f64>, scale_exponent: f64) -> Result<Self, ConformalError> {
        if scores.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ConformalError::InvalidScore);
        }
        if !scale_exponent.is_finite() || scale_exponent <= 0.0 {
            return Err(ConformalError::InvalidScaleExponent(scale_exponent));
        }
        scores.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
        Ok(Self { scores, scale_exponent })
    }

    /// Calibration scores in descending order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-keypoint confidence balls for one image: centers are the predicted
/// means, `radii[n]` is the ball radius, and `capped[n]` records whether the
/// image-diagonal cap was the binding constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointConfidenceRegion {
    pub centers: Vec<Vector2<f64>>,
    pub radii: Vec<f64>,
    pub capped: Vec<bool>,
}

/// Scale `s = det(cov)^q` of one predicted keypoint.
pub fn keypoint_scale(kp: &GaussianKeypoint, scale_exponent: f64) -> Result<f64, ConformalError> {
    if !scale_exponent.is_finite() || scale_exponent <= 0.0 {
        return Err(ConformalError::InvalidScaleExponent(scale_exponent));
    }
    let det = kp.cov.determinant();
    if !det.is_finite() || det <= 0.0 {
        return Err(ConformalError::DegenerateCovariance { det });
    }
    Ok(det.powf(scale_exponent))
}

/// Image-level nonconformity: the worst scaled keypoint error.
pub fn nonconformity(
    gt: &[Vector2<f64>],
    pred: &GaussianKeypointSet,
    scale_exponent: f64,
) -> Result<f64, ConformalError> {
    if gt.len() != pred.len() {
        return Err(ConformalError::LengthMismatch { gt: gt.len(), pred: pred.len() });
    }
    let mut worst = 0.0f64;
    for (g, kp) in gt.iter().zip(&pred.keypoints) {
        let s = keypoint_scale(kp, scale_exponent)?;
        worst = worst.max((g - kp.mean).norm() / s);
    }
    Ok(worst)
}

/// Scores every calibration pair and freezes the sorted result.
pub fn calibrate<'a, I>(dataset: I, scale_exponent: f64) -> Result<CalibrationModel, ConformalError>
where
    I: IntoIterator<Item = (&'a [Vector2<f64>], &'a GaussianKeypointSet)>,
{
    let mut scores = Vec::new();
    for (index, (gt, pred)) in dataset.into_iter().enumerate() {
        let score = nonconformity(gt, pred, scale_exponent)
            .map_err(|source| ConformalError::Sample { index, source: Box::new(source) })?;
        scores.push(score);
    }
    CalibrationModel::new(scores, scale_exponent)
}

/// The calibrated quantile: the `floor(l * epsilon)`-th largest score.
///
/// Errors with [`ConformalError::EpsilonTooSmall`] when `floor(l * epsilon)`
/// is zero, i.e. the requested confidence cannot be certified by only `l`
/// calibration points.
pub fn quantile(model: &CalibrationModel, epsilon: f64) -> Result<f64, ConformalError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(ConformalError::InvalidEpsilon(epsilon));
    }
    let l = model.len();
    // Nudge before flooring so that values like 10 * 0.3 = 2.999...96 land on
    // the intended integer rank.
    let rank = (l as f64 * epsilon + 1e-9).floor() as usize;
    if rank == 0 {
        return Err(ConformalError::EpsilonTooSmall { epsilon, len: l });
    }
    let rank = rank.min(l);
    Ok(model.scores[rank - 1])
}

/// Builds the per-keypoint confidence balls for one prediction.
///
/// Radii are `s_n * quantile`, capped at `image_diagonal`; the cap is
/// recorded per keypoint so coverage accounting can tell capped regions
/// apart.
pub fn predict_region(
    pred: &GaussianKeypointSet,
    model: &CalibrationModel,
    epsilon: f64,
    image_diagonal: f64,
) -> Result<KeypointConfidenceRegion, ConformalError> {
    if !image_diagonal.is_finite() || image_diagonal <= 0.0 {
        return Err(ConformalError::InvalidDiagonal(image_diagonal));
    }
    let alpha = quantile(model, epsilon)?;
    let mut centers = Vec::with_capacity(pred.len());
    let mut radii = Vec::with_capacity(pred.len());
    let mut capped = Vec::with_capacity(pred.len());
    for kp in &pred.keypoints {
        let s = keypoint_scale(kp, model.scale_exponent)?;
        let raw = s * alpha;
        centers.push(kp.mean);
        radii.push(raw.min(image_diagonal));
        capped.push(raw > image_diagonal);
    }
    Ok(KeypointConfidenceRegion { centers, radii, capped })
}

/// Closed-ball containment of all ground-truth keypoints.
pub fn contains(
    region: &KeypointConfidenceRegion,
    gt: &[Vector2<f64>],
) -> Result<bool, ConformalError> {
    if gt.len() != region.centers.len() {
        return Err(ConformalError::LengthMismatch {
            gt: gt.len(),
            pred: region.centers.len(),
        });
    }
    Ok(gt
        .iter()
        .zip(region.centers.iter().zip(&region.radii))
        .all(|(g, (c, r))| (g - c).norm() <= *r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn kp(mean: Vector2<f64>, cov: Matrix2<f64>) -> GaussianKeypoint {
        GaussianKeypoint::new(mean, cov).unwrap()
    }

    fn set_of(kps: Vec<GaussianKeypoint>) -> GaussianKeypointSet {
        GaussianKeypointSet::new(kps).unwrap()
    }

    #[test]
    fn keypoint_scale_uses_det_power() {
        let k = kp(Vector2::zeros(), Matrix2::new(9.0, 0.0, 0.0, 4.0));
        assert_eq!(keypoint_scale(&k, 0.5).unwrap(), 6.0);
        // Geometric-mean std: det = 36, 36^(1/4) = sqrt(6).
        assert!((keypoint_scale(&k, 0.25).unwrap() - 6.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nonconformity_takes_the_worst_scaled_error() {
        // Four keypoints to satisfy the set minimum; two carry the signal.
        let pred = set_of(vec![
            kp(Vector2::zeros(), Matrix2::identity()),
            kp(Vector2::zeros(), Matrix2::new(4.0, 0.0, 0.0, 4.0)),
            kp(Vector2::zeros(), Matrix2::identity()),
            kp(Vector2::zeros(), Matrix2::identity()),
        ]);
        let gt = vec![
            Vector2::new(1.5, 2.0),  // norm 2.5, scale 1
            Vector2::new(0.0, 28.0), // norm 28, scale (16)^(1/4) = 2 -> wait, see below
            Vector2::zeros(),
            Vector2::zeros(),
        ];
        // det(4 I) = 16, 16^(1/4) = 2, so the second score is 14; with
        // q = 1/2 the scale is 4 and the score is 7.
        let r = nonconformity(&gt, &pred, 0.5).unwrap();
        assert_eq!(r, 7.0);
        let r = nonconformity(&gt, &pred, 0.25).unwrap();
        assert_eq!(r, 14.0);
    }

    #[test]
    fn quantile_picks_floor_l_eps_th_largest() {
        let model = CalibrationModel::new(vec![3.0, 5.0, 1.0, 4.0, 2.0], 0.25).unwrap();
        assert_eq!(model.scores(), &[5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(quantile(&model, 0.4).unwrap(), 4.0); // floor(2.0) = 2nd largest
        assert_eq!(quantile(&model, 0.2).unwrap(), 5.0); // floor(1.0) = largest
        assert!(matches!(
            quantile(&model, 0.1),
            Err(ConformalError::EpsilonTooSmall { .. })
        ));
        assert!(matches!(
            quantile(&model, 0.0),
            Err(ConformalError::InvalidEpsilon(_))
        ));
        assert!(matches!(
            quantile(&model, 1.0),
            Err(ConformalError::InvalidEpsilon(_))
        ));
    }

    #[test]
    fn quantile_survives_decimal_epsilon_rounding() {
        // 10 * 0.3 rounds below 3.0 in binary; the rank must still be 3.
        let scores: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let model = CalibrationModel::new(scores, 0.25).unwrap();
        assert_eq!(quantile(&model, 0.3).unwrap(), 8.0);
    }

    #[test]
    fn calibrate_scores_a_linear_ramp() {
        let template = set_of(vec![
            kp(Vector2::zeros(), Matrix2::identity());
            4
        ]);
        let gts: Vec<Vec<Vector2<f64>>> = (1..=100)
            .map(|k| {
                vec![
                    Vector2::new(k as f64 / 100.0, 0.0),
                    Vector2::zeros(),
                    Vector2::zeros(),
                    Vector2::zeros(),
                ]
            })
            .collect();
        let model = calibrate(
            gts.iter().map(|g| (g.as_slice(), &template)),
            DEFAULT_SCALE_EXPONENT,
        )
        .unwrap();
        assert_eq!(model.len(), 100);
        assert_eq!(model.scores()[0], 1.0);
        assert_eq!(model.scores()[99], 0.01);
        // floor(100 * 0.05) = 5th largest = 0.96
        assert!((quantile(&model, 0.05).unwrap() - 0.96).abs() < 1e-12);
    }

    #[test]
    fn calibrate_reports_offending_sample_index() {
        let good = set_of(vec![kp(Vector2::zeros(), Matrix2::identity()); 4]);
        let gt4 = vec![Vector2::zeros(); 4];
        let gt3 = vec![Vector2::zeros(); 3];
        let data = vec![
            (gt4.as_slice(), &good),
            (gt3.as_slice(), &good),
        ];
        let err = calibrate(data, 0.25).unwrap_err();
        match err {
            ConformalError::Sample { index, .. } => assert_eq!(index, 1),
            other => panic!("expected Sample error, got {other}"),
        }
    }

    #[test]
    fn predict_region_scales_and_caps_radii() {
        // Scales 1, 2, 0.5, 1 under q = 1/4.
        let pred = set_of(vec![
            kp(Vector2::new(0.0, 0.0), Matrix2::identity()),
            kp(Vector2::new(10.0, 0.0), Matrix2::new(4.0, 0.0, 0.0, 4.0)),
            kp(Vector2::new(0.0, 10.0), Matrix2::new(0.25, 0.0, 0.0, 0.25)),
            kp(Vector2::new(5.0, 5.0), Matrix2::identity()),
        ]);
        let model = CalibrationModel::new(vec![3.0, 3.0, 3.0, 3.0], 0.25).unwrap();
        let region = predict_region(&pred, &model, 0.25, 1448.0).unwrap();
        assert_eq!(region.radii, vec![3.0, 6.0, 1.5, 3.0]);
        assert_eq!(region.capped, vec![false; 4]);

        let region = predict_region(&pred, &model, 0.25, 4.0).unwrap();
        assert_eq!(region.radii, vec![3.0, 4.0, 1.5, 3.0]);
        assert_eq!(region.capped, vec![false, true, false, false]);
    }

    #[test]
    fn contains_is_closed_at_the_boundary() {
        let region = KeypointConfidenceRegion {
            centers: vec![Vector2::zeros(); 4],
            radii: vec![5.0; 4],
            capped: vec![false; 4],
        };
        let mut gt = vec![Vector2::zeros(); 4];
        gt[0] = Vector2::new(3.0, 4.0); // distance exactly 5
        assert!(contains(&region, &gt).unwrap());
        gt[1] = Vector2::new(5.0 + 1e-12, 0.0);
        assert!(!contains(&region, &gt).unwrap());
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let k = GaussianKeypoint {
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
        };
        assert!(matches!(
            keypoint_scale(&k, 0.25),
            Err(ConformalError::DegenerateCovariance { .. })
        ));
    }
}
