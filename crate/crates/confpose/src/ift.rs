//! Implicit-function-theorem propagation of keypoint uncertainty to pose
//! uncertainty.
//!
//! At a stationary point of the plain reprojection objective
//! `O(y) = sum_n ||r_n||^2` the gradient constraint
//!
//! ```text
//! f(x, y) = dO/dy = -2 sum_n P_n' r_n = 0
//! ```
//!
//! (`P_n` the 2x6 projection Jacobian, `x` the stacked 2N observed keypoint
//! coordinates) implicitly defines the solver output `y = g(x)`. The
//! implicit function theorem gives the pose sensitivity
//!
//! ```text
//! J = dg/dx = -[df/dy]^-1 [df/dx]
//! ```
//!
//! and the first-order uncertainty propagation `Sigma_y = J Sigma_x J'`,
//! whose 3x3 diagonal blocks become rotation (Euler-angle) and translation
//! confidence ellipsoids.
//!
//! Any constant scaling of `f` cancels between the two factors of `J`, so
//! the normalization of the constraint does not affect the propagated
//! covariance; the unit tests pin that cancellation.
//!
//! The constraint differentiated here belongs to the *plain* objective, not
//! the robust weighted one, so poses must come from
//! [`crate::pnp::solve_least_squares`] (or be refined by it) before entering
//! [`pose_jacobian`]; the stationarity gate refuses anything else.

use crate::conformal::KeypointConfidenceRegion;
use crate::geometry::{Ellipsoid3, GaussianKeypointSet, Pose6D, PoseFrame};
use crate::pnp::{reprojection_cost, PnPError, PnPProblem, PnPSolution};
use nalgebra::{Dyn, Matrix2, Matrix3, Matrix6, OMatrix, SymmetricEigen, Vector3, Vector6, U6};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// 6 x 2N pose-by-observation sensitivity matrix.
pub type Matrix6xX = OMatrix<f64, U6, Dyn>;

/// Stationarity gate: `||f|| <= STATIONARITY_TOL * max(1, O(y))`.
pub const STATIONARITY_TOL: f64 = 1e-6;
/// Condition-number limit on `df/dy` beyond which the system is refused.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Relative step for the finite-difference curvature term of `df/dy`.
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IFTError {
    #[error(
        "pose is not a stationary point: constraint norm {gradient_norm:.3e} \
         exceeds threshold {threshold:.3e}; refine with solve_least_squares first"
    )]
    NotStationary { gradient_norm: f64, threshold: f64 },
    #[error("df/dy condition number {condition:.3e} exceeds {CONDITION_LIMIT:.0e}")]
    IllConditioned { condition: f64 },
    #[error("solver did not converge; refusing to differentiate its output")]
    NotConverged,
    #[error("Jacobian has {got} observation columns but covariance expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("epsilon {epsilon} outside (0, 1)")]
    InvalidEpsilon { epsilon: f64 },
    #[error("keypoint covariance block {index} is not symmetric positive semi-definite")]
    InvalidCovariance { index: usize },
    #[error("confidence radius {index} is not finite and non-negative")]
    InvalidRadius { index: usize },
    #[error(transparent)]
    PnP(#[from] PnPError),
}

/// Block-diagonal 2N x 2N keypoint covariance, stored as its N 2x2 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointCovariance {
    blocks: Vec<Matrix2<f64>>,
}

impl KeypointCovariance {
    /// Validates each block as symmetric positive semi-definite (strictly
    /// positive definite in non-degenerate use; exact zeros arise in the
    /// zero-uncertainty limit and propagate to point regions).
    pub fn new(blocks: Vec<Matrix2<f64>>) -> Result<Self, IFTError> {
        for (index, b) in blocks.iter().enumerate() {
            let scale = b.amax().max(1.0);
            let symmetric = (b.m12 - b.m21).abs() <= 1e-9 * scale;
            let finite = b.iter().all(|v| v.is_finite());
            // 2x2 PSD test with a float-noise allowance on the boundary.
            let tol = 1e-12 * scale;
            let psd = b.m11 >= -tol
                && b.m22 >= -tol
                && b.m11 * b.m22 - b.m12 * b.m21 >= -tol * scale;
            if !(finite && symmetric && psd) {
                return Err(IFTError::InvalidCovariance { index });
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Matrix2<f64>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Symmetric PSD 6x6 pose covariance in (yaw, pitch, roll, tx, ty, tz) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCovariance {
    pub full: Matrix6<f64>,
}

impl PoseCovariance {
    /// Upper-left rotation block (Euler-angle covariance, rad^2).
    pub fn rot_block(&self) -> Matrix3<f64> {
        self.full.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Lower-right translation block (m^2).
    pub fn trans_block(&self) -> Matrix3<f64> {
        self.full.fixed_view::<3, 3>(3, 3).into_owned()
    }
}

/// Rotation and translation confidence ellipsoids at a shared error rate.
///
/// The rotation ellipsoid lives in Euler-angle space (radians) centered on
/// the estimated angles; the translation ellipsoid is in meters. Shapes are
/// the corresponding pose-covariance blocks and may be positive
/// *semi*-definite in the zero-uncertainty limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseConfidenceRegion {
    pub rotation: Ellipsoid3,
    pub translation: Ellipsoid3,
    pub epsilon: f64,
}

/// Gradient of the plain reprojection objective: `f = -2 sum_n P_n' r_n`.
pub fn constraint(problem: &PnPProblem, pose: &Pose6D) -> Result<Vector6<f64>, PnPError> {
    let frame = PoseFrame::new(&pose.euler, &pose.translation);
    let mut f = Vector6::zeros();
    for (n, (point, kp)) in problem
        .model
        .points3d
        .iter()
        .zip(&problem.observations.keypoints)
        .enumerate()
    {
        let (pix, jac) = frame
            .project_with_jacobian(point, &problem.cam)
            .map_err(|e| match e {
                crate::geometry::GeometryError::BehindCamera { .. } => {
                    PnPError::PointBehindCamera { index: n }
                }
                other => PnPError::Geometry(other),
            })?;
        let r = kp.mean - pix;
        f += -2.0 * jac.transpose() * r;
    }
    Ok(f)
}

/// `df/dy`: full second-order 6x6 derivative of the constraint in the pose,
/// computed by central finite differences of the analytic [`constraint`]
/// (step `1e-6 * (1 + |y_j|)` per coordinate) and symmetrized. Equals the
/// Gauss-Newton term `2 sum_n P_n' P_n` plus a residual-curvature term that
/// vanishes with the residuals.
pub fn dfdy(problem: &PnPProblem, pose: &Pose6D) -> Result<Matrix6<f64>, PnPError> {
    let y = Vector6::new(
        pose.euler.x,
        pose.euler.y,
        pose.euler.z,
        pose.translation.x,
        pose.translation.y,
        pose.translation.z,
    );
    let mut m = Matrix6::zeros();
    for j in 0..6 {
        let h = FD_STEP * (1.0 + y[j].abs());
        let mut yp = y;
        yp[j] += h;
        let mut ym = y;
        ym[j] -= h;
        let fp = constraint(problem, &pose_from_vec(&yp))?;
        let fm = constraint(problem, &pose_from_vec(&ym))?;
        m.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    // The Hessian of a scalar objective is symmetric; remove the
    // finite-difference asymmetry explicitly.
    Ok((m + m.transpose()) / 2.0)
}

fn pose_from_vec(y: &Vector6<f64>) -> Pose6D {
    Pose6D {
        euler: Vector3::new(y[0], y[1], y[2]),
        translation: Vector3::new(y[3], y[4], y[5]),
    }
}

/// `df/dx`: 6 x 2N derivative of the constraint in the stacked observations.
/// Observation `n` enters only its own residual, so its column pair is the
/// constant block `-2 P_n'`.
pub fn dfdx(problem: &PnPProblem, pose: &Pose6D) -> Result<Matrix6xX, PnPError> {
    let frame = PoseFrame::new(&pose.euler, &pose.translation);
    let n = problem.len();
    let mut m = Matrix6xX::zeros(2 * n);
    for (i, point) in problem.model.points3d.iter().enumerate() {
        let (_, jac) = frame
            .project_with_jacobian(point, &problem.cam)
            .map_err(|e| match e {
                crate::geometry::GeometryError::BehindCamera { .. } => {
                    PnPError::PointBehindCamera { index: i }
                }
                other => PnPError::Geometry(other),
            })?;
        m.fixed_view_mut::<6, 2>(0, 2 * i)
            .copy_from(&(-2.0 * jac.transpose()));
    }
    Ok(m)
}

/// Pose-by-observation sensitivity `J = -[df/dy]^-1 [df/dx]` at a stationary
/// point of the plain reprojection objective.
///
/// Refuses poses that are not stationary (`||f||` above
/// [`STATIONARITY_TOL`] relative to the cost scale) and systems whose
/// `df/dy` condition number exceeds [`CONDITION_LIMIT`].
pub fn pose_jacobian(problem: &PnPProblem, pose: &Pose6D) -> Result<Matrix6xX, IFTError> {
    let f = constraint(problem, pose)?;
    let cost = reprojection_cost(problem, pose)?;
    let threshold = STATIONARITY_TOL * cost.max(1.0);
    let gradient_norm = f.norm();
    if !(gradient_norm <= threshold) {
        return Err(IFTError::NotStationary { gradient_norm, threshold });
    }

    let a = dfdy(problem, pose)?;
    let eig = SymmetricEigen::new(a);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(IFTError::IllConditioned { condition });
    }

    let b = dfdx(problem, pose)?;
    let solved = a
        .lu()
        .solve(&b)
        .ok_or(IFTError::IllConditioned { condition })?;
    Ok(-solved)
}

/// First-order covariance propagation `Sigma_y = J Sigma_x J'` with a
/// block-diagonal `Sigma_x`. The result is symmetrized and negative
/// eigenvalues from float round-off are clipped to zero.
pub fn propagate(j: &Matrix6xX, kp_cov: &KeypointCovariance) -> Result<PoseCovariance, IFTError> {
    let expected = 2 * kp_cov.len();
    if j.ncols() != expected {
        return Err(IFTError::DimensionMismatch { expected, got: j.ncols() });
    }
    let mut full = Matrix6::zeros();
    for (n, block) in kp_cov.blocks().iter().enumerate() {
        let jn = j.fixed_view::<6, 2>(0, 2 * n).into_owned();
        full += jn * block * jn.transpose();
    }
    full = (full + full.transpose()) / 2.0;
    let mut eig = SymmetricEigen::new(full);
    if eig.eigenvalues.iter().any(|&v| v < 0.0) {
        for v in eig.eigenvalues.iter_mut() {
            *v = v.max(0.0);
        }
        full = eig.recompose();
        full = (full + full.transpose()) / 2.0;
    }
    Ok(PoseCovariance { full })
}

/// `kappa = sqrt(chi^2_2 quantile at 1 - epsilon) = sqrt(-2 ln epsilon)`:
/// the Mahalanobis radius at which an isotropic 2D Gaussian holds exactly
/// `1 - epsilon` of its mass.
pub fn kappa_for_epsilon(epsilon: f64) -> Result<f64, IFTError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(IFTError::InvalidEpsilon { epsilon });
    }
    Ok((-2.0 * epsilon.ln()).sqrt())
}

/// Squared-Mahalanobis boundary of the pose ellipsoids: `1` in the
/// one-Mahalanobis convention (`chi2_calibrated = false`), else the
/// chi-square(3) quantile at `1 - epsilon` so that a Gaussian pose estimate
/// would hold `1 - epsilon` of its mass inside each 3D ellipsoid.
pub fn ellipsoid_scale(chi2_calibrated: bool, epsilon: f64) -> Result<f64, IFTError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(IFTError::InvalidEpsilon { epsilon });
    }
    if !chi2_calibrated {
        return Ok(1.0);
    }
    let chi2 = ChiSquared::new(3.0).expect("chi-square with 3 dof");
    Ok(chi2.inverse_cdf(1.0 - epsilon))
}

/// Keypoint covariance surrogate for calibrated confidence balls: isotropic
/// blocks `(radius_n / kappa)^2 I` whose own `1 - epsilon` Gaussian contour
/// coincides with the ball of `radius_n`.
pub fn covariance_from_region(
    region: &KeypointConfidenceRegion,
    epsilon: f64,
) -> Result<KeypointCovariance, IFTError> {
    let kappa = kappa_for_epsilon(epsilon)?;
    let mut blocks = Vec::with_capacity(region.radii.len());
    for (index, &r) in region.radii.iter().enumerate() {
        if !(r.is_finite() && r >= 0.0) {
            return Err(IFTError::InvalidRadius { index });
        }
        let v = (r / kappa).powi(2);
        blocks.push(Matrix2::new(v, 0.0, 0.0, v));
    }
    KeypointCovariance::new(blocks)
}

/// Keypoint covariance taken directly from the predicted 2x2 covariances,
/// bypassing the conformal calibration (for comparison pipelines).
pub fn covariance_from_predictions(observations: &GaussianKeypointSet) -> KeypointCovariance {
    // Covariances were validated SPD at construction.
    KeypointCovariance {
        blocks: observations.keypoints.iter().map(|kp| kp.cov).collect(),
    }
}

/// Rotation/translation confidence ellipsoids from an explicit keypoint
/// covariance: differentiate at the solution, propagate, and wrap the
/// covariance blocks with the requested boundary scale.
pub fn pose_region(
    problem: &PnPProblem,
    solution: &PnPSolution,
    kp_cov: &KeypointCovariance,
    epsilon: f64,
    chi2_calibrated: bool,
) -> Result<PoseConfidenceRegion, IFTError> {
    if !solution.converged {
        return Err(IFTError::NotConverged);
    }
    let j = pose_jacobian(problem, &solution.pose)?;
    let cov = propagate(&j, kp_cov)?;
    let scale = ellipsoid_scale(chi2_calibrated, epsilon)?;
    Ok(PoseConfidenceRegion {
        rotation: Ellipsoid3 {
            center: solution.pose.euler,
            shape: cov.rot_block(),
            scale,
        },
        translation: Ellipsoid3 {
            center: solution.pose.translation,
            shape: cov.trans_block(),
            scale,
        },
        epsilon,
    })
}

/// End-to-end step from calibrated 2D confidence balls to 6D pose
/// ellipsoids. `region2d` must be index-aligned with the problem's
/// observations (its radii are read per keypoint).
pub fn region_from_conformal(
    problem: &PnPProblem,
    solution: &PnPSolution,
    region2d: &KeypointConfidenceRegion,
    epsilon: f64,
    chi2_calibrated: bool,
) -> Result<PoseConfidenceRegion, IFTError> {
    let kp_cov = covariance_from_region(region2d, epsilon)?;
    pose_region(problem, solution, &kp_cov, epsilon, chi2_calibrated)
}
