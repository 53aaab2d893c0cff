//! Coverage and volume metrics for 2D keypoint regions and 6D pose regions.
//!
//! Conventions: rotation ellipsoids live in Euler-angle space and their
//! volumes are reported in degrees cubed (the covariance is converted
//! rad -> deg before the determinant); translation volumes are cubic meters.
//! A pose region only counts as covering when the ground truth lies inside
//! *and* its volume stays under the threshold; over-threshold regions are
//! tallied separately ("out") and excluded from mean volumes. When every
//! region exceeds the threshold the mean is undefined and reported as
//! `None` (JSON `null`).
//!
//! Euler coordinates are periodic, so ground-truth differences are wrapped
//! per axis to (-180, 180] degrees before the Mahalanobis test; the
//! boundary choice between the two half-open conventions is immaterial
//! because the quadratic form only sees squared differences.

use crate::conformal::{contains as region2d_contains, KeypointConfidenceRegion};
use crate::geometry::Ellipsoid3;
use crate::ift::PoseConfidenceRegion;
use crate::geometry::Pose6D;
use nalgebra::Vector2;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("list lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("ellipsoid shape determinant {det:.3e} is not positive")]
    DegenerateShape { det: f64 },
    #[error("thresholds must be positive")]
    InvalidThresholds,
}

/// Volume thresholds above which a region is considered uninformative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Rotation volume threshold in degrees cubed.
    pub tau_rot_deg3: f64,
    /// Translation volume threshold in cubic meters.
    pub tau_trans_m3: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tau_rot_deg3: 90.0 * 90.0 * 90.0, tau_trans_m3: 1.0 }
    }
}

impl Thresholds {
    pub fn new(tau_rot_deg3: f64, tau_trans_m3: f64) -> Result<Self, MetricsError> {
        if tau_rot_deg3 > 0.0 && tau_trans_m3 > 0.0 {
            Ok(Self { tau_rot_deg3, tau_trans_m3 })
        } else {
            Err(MetricsError::InvalidThresholds)
        }
    }
}

/// Rotation/translation volume pair of one image's deterministic region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumePair {
    pub rot_deg3: f64,
    pub trans_m3: f64,
}

/// Everything the aggregate metrics need from one evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    /// All ground-truth keypoints inside their calibrated 2D balls.
    pub kpt_covered: bool,
    /// Ground-truth Euler angles inside the rotation ellipsoid (wrapped).
    pub rot_inside: bool,
    /// Ground-truth translation inside the translation ellipsoid.
    pub trans_inside: bool,
    pub v_rot_deg3: f64,
    pub v_trans_m3: f64,
    /// Calibrated per-keypoint radii of this image (px).
    pub radii: Vec<f64>,
}

/// Aggregate evaluation results; see the module docs for the semantics of
/// over-threshold regions and undefined means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Fraction of images whose keypoints were all covered by the 2D balls.
    pub eta_kpt: f64,
    /// Fraction of images with rotation covered (inside and under threshold).
    pub eta_rot: f64,
    /// Fraction of images with translation covered.
    pub eta_trans: f64,
    /// Mean rotation volume (deg^3) over in-threshold images; `None` when
    /// every region exceeded the threshold.
    pub mean_v_rot_deg3: Option<f64>,
    /// Mean translation volume (m^3) over in-threshold images.
    pub mean_v_trans_m3: Option<f64>,
    /// Number of images whose rotation volume exceeded the threshold.
    pub out_rot: usize,
    /// Number of images whose translation volume exceeded the threshold.
    pub out_trans: usize,
    /// Mean calibrated radius per keypoint index (px).
    pub radii_stats: Vec<f64>,
    /// Per-image volume pairs, retained for CDF/boxplot export.
    pub volume_samples: Vec<VolumePair>,
}

/// Fraction of images whose ground-truth keypoints all lie inside their
/// calibrated 2D confidence balls.
pub fn keypoint_coverage(
    regions: &[KeypointConfidenceRegion],
    gts: &[Vec<Vector2<f64>>],
) -> Result<f64, MetricsError> {
    if regions.len() != gts.len() {
        return Err(MetricsError::LengthMismatch { a: regions.len(), b: gts.len() });
    }
    if regions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut covered = 0usize;
    for (r, gt) in regions.iter().zip(gts) {
        let inside = region2d_contains(r, gt)
            .map_err(|_| MetricsError::LengthMismatch { a: r.centers.len(), b: gt.len() })?;
        if inside {
            covered += 1;
        }
    }
    Ok(covered as f64 / regions.len() as f64)
}

/// Ellipsoid volume `(4/3) pi scale^{3/2} sqrt(det(shape))` in the shape's
/// own units. Errors on non-positive determinants; callers that must
/// tolerate the zero-uncertainty limit use [`volume_or_zero`].
pub fn ellipsoid_volume(e: &Ellipsoid3) -> Result<f64, MetricsError> {
    let det = e.shape.determinant();
    if !(det > 0.0) {
        return Err(MetricsError::DegenerateShape { det });
    }
    Ok(4.0 / 3.0 * PI * e.scale.powf(1.5) * det.sqrt())
}

/// Like [`ellipsoid_volume`] but mapping positive semi-definite degenerate
/// shapes (the zero-uncertainty limit) to volume zero.
pub fn volume_or_zero(e: &Ellipsoid3) -> f64 {
    let det = e.shape.determinant();
    if det > 0.0 {
        4.0 / 3.0 * PI * e.scale.powf(1.5) * det.sqrt()
    } else {
        0.0
    }
}

const DEG_PER_RAD: f64 = 180.0 / PI;

/// Volume of a rotation ellipsoid whose shape is in rad^2, reported in
/// degrees cubed: the covariance is converted to deg^2 before the
/// determinant, which multiplies the volume by (180/pi)^3.
pub fn rotation_volume_deg3(e: &Ellipsoid3) -> Result<f64, MetricsError> {
    let scaled = Ellipsoid3 {
        center: e.center,
        shape: e.shape * (DEG_PER_RAD * DEG_PER_RAD),
        scale: e.scale,
    };
    ellipsoid_volume(&scaled)
}

/// [`rotation_volume_deg3`] with the degenerate-shape-to-zero convention.
pub fn rotation_volume_or_zero_deg3(e: &Ellipsoid3) -> f64 {
    volume_or_zero(e) * DEG_PER_RAD.powi(3)
}

/// Shortest signed angular difference, wrapped to (-pi, pi].
fn wrap_diff(d: f64) -> f64 {
    PI - (PI - d).rem_euclid(2.0 * PI)
}

/// Closed-region membership of a ground-truth Euler triple in a rotation
/// ellipsoid, with every axis difference wrapped to (-pi, pi] first.
/// Degenerate (PSD-singular) shapes contain exactly their center.
pub fn euler_in_ellipsoid(gt_euler: &Vector3<f64>, e: &Ellipsoid3) -> bool {
    let d = Vector3::new(
        wrap_diff(gt_euler.x - e.center.x),
        wrap_diff(gt_euler.y - e.center.y),
        wrap_diff(gt_euler.z - e.center.z),
    );
    match e.shape.cholesky() {
        Some(chol) => d.dot(&chol.solve(&d)) <= e.scale,
        None => d.amax() == 0.0,
    }
}

/// Per-dataset pose coverage: an image counts as covered for rotation when
/// the ground truth lies inside the rotation ellipsoid *and* the rotation
/// volume is at or under the threshold (analogously for translation).
/// Returns `(eta_rot, eta_trans, out_rot, out_trans)`.
pub fn pose_coverage(
    regions: &[PoseConfidenceRegion],
    gt_poses: &[Pose6D],
    th: &Thresholds,
) -> Result<(f64, f64, usize, usize), MetricsError> {
    if regions.len() != gt_poses.len() {
        return Err(MetricsError::LengthMismatch { a: regions.len(), b: gt_poses.len() });
    }
    if regions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut rot_cov = 0usize;
    let mut trans_cov = 0usize;
    let mut out_rot = 0usize;
    let mut out_trans = 0usize;
    for (region, gt) in regions.iter().zip(gt_poses) {
        let v_rot = rotation_volume_or_zero_deg3(&region.rotation);
        let v_trans = volume_or_zero(&region.translation);
        let rot_in = euler_in_ellipsoid(&gt.euler, &region.rotation);
        let trans_in = region.translation.contains(&gt.translation);
        if v_rot > th.tau_rot_deg3 {
            out_rot += 1;
        } else if rot_in {
            rot_cov += 1;
        }
        if v_trans > th.tau_trans_m3 {
            out_trans += 1;
        } else if trans_in {
            trans_cov += 1;
        }
    }
    let n = regions.len() as f64;
    Ok((rot_cov as f64 / n, trans_cov as f64 / n, out_rot, out_trans))
}

/// Aggregate per-image outcomes into an [`EvaluationReport`].
pub fn summarize(
    outcomes: &[ImageOutcome],
    th: &Thresholds,
) -> Result<EvaluationReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n_kpt = outcomes[0].radii.len();
    for o in outcomes {
        if o.radii.len() != n_kpt {
            return Err(MetricsError::LengthMismatch { a: n_kpt, b: o.radii.len() });
        }
    }
    let n = outcomes.len() as f64;
    let eta_kpt = outcomes.iter().filter(|o| o.kpt_covered).count() as f64 / n;

    let mut rot_cov = 0usize;
    let mut trans_cov = 0usize;
    let mut out_rot = 0usize;
    let mut out_trans = 0usize;
    let mut sum_v_rot = 0.0;
    let mut in_rot = 0usize;
    let mut sum_v_trans = 0.0;
    let mut in_trans = 0usize;
    for o in outcomes {
        if o.v_rot_deg3 > th.tau_rot_deg3 {
            out_rot += 1;
        } else {
            sum_v_rot += o.v_rot_deg3;
            in_rot += 1;
            if o.rot_inside {
                rot_cov += 1;
            }
        }
        if o.v_trans_m3 > th.tau_trans_m3 {
            out_trans += 1;
        } else {
            sum_v_trans += o.v_trans_m3;
            in_trans += 1;
            if o.trans_inside {
                trans_cov += 1;
            }
        }
    }

    let mut radii_stats = vec![0.0; n_kpt];
    for o in outcomes {
        for (s, r) in radii_stats.iter_mut().zip(&o.radii) {
            *s += r;
        }
    }
    for s in &mut radii_stats {
        *s /= n;
    }

    Ok(EvaluationReport {
        eta_kpt,
        eta_rot: rot_cov as f64 / n,
        eta_trans: trans_cov as f64 / n,
        mean_v_rot_deg3: (in_rot > 0).then(|| sum_v_rot / in_rot as f64),
        mean_v_trans_m3: (in_trans > 0).then(|| sum_v_trans / in_trans as f64),
        out_rot,
        out_trans,
        radii_stats,
        volume_samples: outcomes
            .iter()
            .map(|o| VolumePair { rot_deg3: o.v_rot_deg3, trans_m3: o.v_trans_m3 })
            .collect(),
    })
}

/// Five-number boxplot summary with Tukey 1.5 IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Smallest sample at or above `q1 - 1.5 IQR`.
    pub whisker_lo: f64,
    /// Largest sample at or below `q3 + 1.5 IQR`.
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Linearly interpolated quantile of an ascending-sorted slice (the common
/// "type 7" rule: index `(n - 1) p`).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let idx = (sorted.len() - 1) as f64 * p;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Boxplot statistics of a non-empty sample set.
pub fn boxplot_stats(samples: &[f64]) -> Result<BoxplotStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_bound = q1 - 1.5 * iqr;
    let hi_bound = q3 + 1.5 * iqr;
    let whisker_lo = sorted
        .iter()
        .copied()
        .find(|&v| v >= lo_bound)
        .unwrap_or(sorted[0]);
    let whisker_hi = sorted
        .iter()
        .rev()
        .copied()
        .find(|&v| v <= hi_bound)
        .unwrap_or(sorted[sorted.len() - 1]);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < lo_bound || v > hi_bound)
        .collect();
    Ok(BoxplotStats { q1, median, q3, whisker_lo, whisker_hi, outliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn region_at(
        center_rot: Vector3<f64>,
        center_trans: Vector3<f64>,
        shape_rot: Matrix3<f64>,
        shape_trans: Matrix3<f64>,
        scale: f64,
    ) -> PoseConfidenceRegion {
        PoseConfidenceRegion {
            rotation: Ellipsoid3 { center: center_rot, shape: shape_rot, scale },
            translation: Ellipsoid3 { center: center_trans, shape: shape_trans, scale },
            epsilon: 0.1,
        }
    }

    fn ball(center: Vector2<f64>, r: f64, n: usize) -> KeypointConfidenceRegion {
        KeypointConfidenceRegion {
            centers: vec![center; n],
            radii: vec![r; n],
            capped: vec![false; n],
        }
    }

    #[test]
    fn thresholds_defaults_and_validation() {
        let th = Thresholds::default();
        assert_eq!(th.tau_rot_deg3, 729_000.0);
        assert_eq!(th.tau_trans_m3, 1.0);
        assert!(Thresholds::new(1.0, 0.0).is_err());
        assert!(Thresholds::new(-1.0, 1.0).is_err());
        assert!(Thresholds::new(10.0, 0.5).is_ok());
    }

    #[test]
    fn keypoint_coverage_is_plain_arithmetic() {
        let inside = vec![Vector2::new(0.5, 0.0); 4];
        let outside = vec![Vector2::new(9.0, 0.0); 4];
        let regions = vec![ball(Vector2::zeros(), 1.0, 4); 10];
        let mut gts = vec![inside; 10];
        assert_eq!(keypoint_coverage(&regions, &gts).unwrap(), 1.0);
        gts[3] = outside;
        assert_eq!(keypoint_coverage(&regions, &gts).unwrap(), 0.9);
        assert!(matches!(
            keypoint_coverage(&[], &[]),
            Err(MetricsError::EmptyInput)
        ));
        assert!(matches!(
            keypoint_coverage(&regions, &gts[..9]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ellipsoid_volume_matches_closed_forms() {
        let unit = Ellipsoid3::new(Vector3::zeros(), Matrix3::identity(), 1.0).unwrap();
        assert!((ellipsoid_volume(&unit).unwrap() - 4.0 * PI / 3.0).abs() < 1e-12);

        let stretched = Ellipsoid3::new(
            Vector3::zeros(),
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)),
            1.0,
        )
        .unwrap();
        assert!((ellipsoid_volume(&stretched).unwrap() - 8.0 * PI / 3.0).abs() < 1e-12);

        let scaled = Ellipsoid3::new(Vector3::zeros(), Matrix3::identity(), 4.0).unwrap();
        assert!((ellipsoid_volume(&scaled).unwrap() - 32.0 * PI / 3.0).abs() < 1e-12);

        let degenerate = Ellipsoid3 {
            center: Vector3::zeros(),
            shape: Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)),
            scale: 1.0,
        };
        assert!(matches!(
            ellipsoid_volume(&degenerate),
            Err(MetricsError::DegenerateShape { .. })
        ));
        assert_eq!(volume_or_zero(&degenerate), 0.0);
    }

    #[test]
    fn volume_scales_as_c_to_the_three_halves() {
        let base = Ellipsoid3::new(
            Vector3::zeros(),
            Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0),
            1.7,
        )
        .unwrap();
        let v1 = ellipsoid_volume(&base).unwrap();
        for c in [2.0, 5.0, 117.3] {
            let scaled = Ellipsoid3 { scale: base.scale * c, ..base };
            let v2 = ellipsoid_volume(&scaled).unwrap();
            assert!(
                (v2 / v1 - c.powf(1.5)).abs() <= 1e-12 * c.powf(1.5),
                "c = {c}: ratio {}",
                v2 / v1
            );
        }
    }

    #[test]
    fn rotation_volume_unit_conversion_is_the_cubed_factor() {
        let e = Ellipsoid3::new(
            Vector3::zeros(),
            Matrix3::from_diagonal(&Vector3::new(0.01, 0.02, 0.005)),
            6.25,
        )
        .unwrap();
        let v_rad = ellipsoid_volume(&e).unwrap();
        let v_deg = rotation_volume_deg3(&e).unwrap();
        assert!((v_deg - v_rad * DEG_PER_RAD.powi(3)).abs() <= 1e-9 * v_deg);
        assert!((rotation_volume_or_zero_deg3(&e) - v_deg).abs() <= 1e-12 * v_deg);
    }

    #[test]
    fn pose_coverage_counts_inside_and_thresholds() {
        let th = Thresholds::default();
        let small = Matrix3::from_diagonal(&Vector3::new(1e-4, 1e-4, 1e-4));
        let gt = Pose6D {
            euler: Vector3::new(0.1, 0.2, -0.1),
            translation: Vector3::new(0.0, 0.0, 3.0),
        };
        // Ground truth at the centers, volumes tiny: full coverage.
        let r = region_at(gt.euler, gt.translation, small, small, 1.0);
        let (er, et, or_, ot) = pose_coverage(&[r], &[gt.clone()], &th).unwrap();
        assert_eq!((er, et, or_, ot), (1.0, 1.0, 0, 0));

        // Rotation volume over threshold with gt inside: counted out and
        // uncovered for rotation only.
        let huge = Matrix3::from_diagonal(&Vector3::new(4.0, 4.0, 4.0)); // rad^2
        let r = region_at(gt.euler, gt.translation, huge, small, 1.0);
        let (er, et, or_, ot) = pose_coverage(&[r], &[gt.clone()], &th).unwrap();
        assert_eq!((er, et, or_, ot), (0.0, 1.0, 1, 0));

        // Translation volume over threshold analogously.
        let big_t = Matrix3::from_diagonal(&Vector3::new(0.49, 0.49, 0.49));
        let r = region_at(gt.euler, gt.translation, small, big_t, 1.0);
        let (er, et, or_, ot) = pose_coverage(&[r], &[gt.clone()], &th).unwrap();
        assert_eq!((er, et, or_, ot), (1.0, 0.0, 0, 1));
    }

    #[test]
    fn boundary_points_are_covered() {
        // gt exactly at squared Mahalanobis distance == scale.
        let th = Thresholds::default();
        let shape = Matrix3::from_diagonal(&Vector3::new(1e-4, 1e-4, 1e-4));
        let center = Vector3::new(0.0, 0.0, 3.0);
        let gt = Pose6D {
            euler: Vector3::zeros(),
            translation: center + Vector3::new((1e-4f64 * 2.5).sqrt(), 0.0, 0.0),
        };
        let r = region_at(Vector3::zeros(), center, shape, shape, 2.5);
        let (_, et, _, _) = pose_coverage(&[r], &[gt], &th).unwrap();
        assert_eq!(et, 1.0);
    }

    #[test]
    fn euler_membership_wraps_across_the_periodic_seam() {
        // Center near +179 deg yaw, ground truth near -179 deg: the raw
        // difference is ~358 deg but the wrapped difference is 2 deg.
        let two_deg = 2.0f64.to_radians();
        let shape = Matrix3::from_diagonal(&Vector3::new(
            (3.0 * two_deg).powi(2),
            1e-4,
            1e-4,
        ));
        let e = Ellipsoid3 {
            center: Vector3::new(179.0f64.to_radians(), 0.0, 0.0),
            shape,
            scale: 1.0,
        };
        let gt = Vector3::new(-179.0f64.to_radians(), 0.0, 0.0);
        assert!(euler_in_ellipsoid(&gt, &e));
        let far = Vector3::new(100.0f64.to_radians(), 0.0, 0.0);
        assert!(!euler_in_ellipsoid(&far, &e));
    }

    fn outcome(v_rot: f64, v_trans: f64, rot_in: bool, trans_in: bool) -> ImageOutcome {
        ImageOutcome {
            kpt_covered: true,
            rot_inside: rot_in,
            trans_inside: trans_in,
            v_rot_deg3: v_rot,
            v_trans_m3: v_trans,
            radii: vec![2.0, 4.0],
        }
    }

    #[test]
    fn summarize_filters_means_and_counts_out() {
        let th = Thresholds::default();
        let outcomes = vec![
            outcome(1.0, 0.1, true, true),
            outcome(2.0, 0.2, true, true),
            outcome(th.tau_rot_deg3 + 1.0, 0.3, true, true),
        ];
        let rep = summarize(&outcomes, &th).unwrap();
        assert_eq!(rep.mean_v_rot_deg3, Some(1.5));
        assert_eq!(rep.out_rot, 1);
        assert_eq!(rep.out_trans, 0);
        assert!((rep.mean_v_trans_m3.unwrap() - 0.2).abs() < 1e-15);
        assert!((rep.eta_rot - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.eta_trans, 1.0);
        assert_eq!(rep.radii_stats, vec![2.0, 4.0]);
        assert_eq!(rep.volume_samples.len(), 3);
    }

    #[test]
    fn summarize_reports_undefined_mean_when_all_exceed() {
        let th = Thresholds::default();
        let outcomes = vec![
            outcome(th.tau_rot_deg3 * 2.0, 0.1, true, true),
            outcome(th.tau_rot_deg3 * 3.0, 0.2, true, true),
        ];
        let rep = summarize(&outcomes, &th).unwrap();
        assert_eq!(rep.mean_v_rot_deg3, None);
        assert_eq!(rep.out_rot, 2);
        assert_eq!(rep.eta_rot, 0.0);
        // The undefined marker serializes as JSON null.
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"mean_v_rot_deg3\":null"));
    }

    #[test]
    fn summarize_single_image_mean_is_that_volume() {
        let th = Thresholds::default();
        let rep = summarize(&[outcome(42.0, 0.5, true, false)], &th).unwrap();
        assert_eq!(rep.mean_v_rot_deg3, Some(42.0));
        assert_eq!(rep.mean_v_trans_m3, Some(0.5));
        assert_eq!(rep.eta_trans, 0.0);
    }

    #[test]
    fn rates_are_permutation_invariant_and_match_a_recount() {
        let th = Thresholds::default();
        let outcomes: Vec<ImageOutcome> = (0..40)
            .map(|i| {
                outcome(
                    (i as f64) * 40_000.0,
                    (i as f64) * 0.04,
                    i % 3 != 0,
                    i % 4 != 0,
                )
            })
            .collect();
        let rep = summarize(&outcomes, &th).unwrap();
        let mut shuffled = outcomes.clone();
        shuffled.reverse();
        shuffled.swap(0, 17);
        let rep2 = summarize(&shuffled, &th).unwrap();
        assert_eq!(rep.eta_rot, rep2.eta_rot);
        assert_eq!(rep.eta_trans, rep2.eta_trans);
        assert_eq!(rep.out_rot, rep2.out_rot);
        assert_eq!(rep.mean_v_rot_deg3, rep2.mean_v_rot_deg3);

        // Brute-force recount of the rotation rate.
        let expected = outcomes
            .iter()
            .filter(|o| o.rot_inside && o.v_rot_deg3 <= th.tau_rot_deg3)
            .count() as f64
            / outcomes.len() as f64;
        assert_eq!(rep.eta_rot, expected);
        assert!(rep.eta_rot >= 0.0 && rep.eta_rot <= 1.0);
    }

    #[test]
    fn raising_the_threshold_never_decreases_coverage() {
        let outcomes: Vec<ImageOutcome> = (0..30)
            .map(|i| outcome((i as f64) * 60_000.0, (i as f64) * 0.06, true, true))
            .collect();
        let mut last_rot = 0.0;
        let mut last_trans = 0.0;
        for mult in [0.5, 1.0, 2.0, 4.0, 100.0] {
            let th = Thresholds::new(729_000.0 * mult, 1.0 * mult).unwrap();
            let rep = summarize(&outcomes, &th).unwrap();
            assert!(rep.eta_rot >= last_rot);
            assert!(rep.eta_trans >= last_trans);
            last_rot = rep.eta_rot;
            last_trans = rep.eta_trans;
        }
    }

    #[test]
    fn boxplot_matches_hand_computed_quartiles() {
        let samples: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        let b = boxplot_stats(&samples).unwrap();
        assert!((b.q1 - 2.75).abs() < 1e-15);
        assert!((b.median - 4.5).abs() < 1e-15);
        assert!((b.q3 - 6.25).abs() < 1e-15);
        assert_eq!(b.whisker_lo, 1.0);
        assert_eq!(b.whisker_hi, 8.0);
        assert!(b.outliers.is_empty());

        let with_outlier: Vec<f64> = (1..=8).map(|v| v as f64).chain([100.0]).collect();
        let b = boxplot_stats(&with_outlier).unwrap();
        assert_eq!(b.q1, 3.0);
        assert_eq!(b.median, 5.0);
        assert_eq!(b.q3, 7.0);
        assert_eq!(b.whisker_hi, 8.0);
        assert_eq!(b.outliers, vec![100.0]);

        assert!(matches!(boxplot_stats(&[]), Err(MetricsError::EmptyInput)));
        let single = boxplot_stats(&[3.5]).unwrap();
        assert_eq!(single.median, 3.5);
        assert_eq!(single.q1, 3.5);
    }
}
