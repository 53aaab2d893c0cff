//! Single-shot robust weighted perspective-n-point.
//!
//! [`solve`] minimizes the robust weighted reprojection objective
//!
//! ```text
//! C(y) = sum_n rho( r_n' W_n r_n ),     r_n = observed_n - projected_n(y)
//! ```
//!
//! with `W_n` the inverse predicted covariance (or identity when
//! `use_weights` is off) and `rho` the Huber loss applied to the squared
//! Mahalanobis residual: `rho(e) = e^2 / 2` for `e <= delta`, else
//! `delta * (e - delta / 2)`. Minimization is damped Gauss-Newton with
//! Levenberg-style damping (times 10 on a rejected step, divided by 10 on an
//! accepted one) and an analytic projection Jacobian. No sampling and no
//! RANSAC anywhere: one deterministic descent from one deterministic
//! initialization.
//!
//! [`solve_least_squares`] minimizes the plain unweighted objective
//! `O(y) = sum_n ||r_n||^2` with the same machinery. Its stationary points
//! are the ones the [`crate::ift`] module differentiates, so pipelines
//! refine the robust solution with it before propagating uncertainty.

use crate::geometry::{
    matrix_to_euler, CameraIntrinsics, GaussianKeypointSet, GeometryError, ObjectModel, Pose6D,
    PoseFrame,
};
use nalgebra::{Cholesky, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnPError {
    #[error("model has {model} points but observation set has {observations}")]
    CountMismatch { model: usize, observations: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("keypoint {index} covariance is singular (det {det:.3e})")]
    DegenerateCovariance { index: usize, det: f64 },
    #[error("keypoint {index} is behind the camera at the given pose")]
    PointBehindCamera { index: usize },
    #[error("all model points are behind the camera at the initial pose")]
    AllPointsBehindCamera,
    #[error("normal equations are singular (condition number {condition:.3e})")]
    SingularNormalEquations { condition: f64 },
    #[error("initialization is degenerate: {reason}")]
    DegenerateModel { reason: String },
    #[error("solver configuration is invalid: {reason}")]
    InvalidConfig { reason: String },
}

/// One pose estimation problem: index-aligned model points and Gaussian
/// keypoint observations under a fixed camera.
#[derive(Debug, Clone)]
pub struct PnPProblem {
    pub model: ObjectModel,
    pub observations: GaussianKeypointSet,
    pub cam: CameraIntrinsics,
}

impl PnPProblem {
    pub fn new(
        model: ObjectModel,
        observations: GaussianKeypointSet,
        cam: CameraIntrinsics,
    ) -> Result<Self, PnPError> {
        if model.len() != observations.len() {
            return Err(PnPError::CountMismatch {
                model: model.len(),
                observations: observations.len(),
            });
        }
        Ok(Self { model, observations, cam })
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }
}

/// Solver knobs. `huber_delta` is in squared weighted pixels because the
/// loss acts on the squared Mahalanobis residual.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub huber_delta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_damping: f64,
    pub use_weights: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            huber_delta: 1.0,
            max_iters: 100,
            grad_tol: 1e-10,
            initial_damping: 1e-3,
            use_weights: true,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), PnPError> {
        let ok = self.huber_delta > 0.0
            && self.huber_delta.is_finite()
            && self.grad_tol > 0.0
            && self.grad_tol.is_finite()
            && self.initial_damping > 0.0
            && self.initial_damping.is_finite()
            && self.max_iters >= 1;
        if ok {
            Ok(())
        } else {
            Err(PnPError::InvalidConfig {
                reason: "huber_delta, grad_tol, initial_damping must be positive; max_iters >= 1"
                    .into(),
            })
        }
    }
}

/// Solver output. `converged` means the gradient norm fell below
/// `grad_tol * max(1, final_cost)`; otherwise the best iterate is returned.
#[derive(Debug, Clone)]
pub struct PnPSolution {
    pub pose: Pose6D,
    pub final_cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Huber loss on a (non-negative) squared residual.
pub fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

fn huber_deriv(e: f64, delta: f64) -> (f64, f64) {
    if e <= delta {
        (e, 1.0)
    } else {
        (delta, 0.0)
    }
}

/// Reprojection residual `observed_n - projected_n` of one keypoint.
pub fn residual(problem: &PnPProblem, pose: &Pose6D, n: usize) -> Result<Vector2<f64>, PnPError> {
    let frame = PoseFrame::new(&pose.euler, &pose.translation);
    let pix = frame
        .project(&problem.model.points3d[n], &problem.cam)
        .map_err(|e| behind_to_index(e, n))?;
    Ok(problem.observations.keypoints[n].mean - pix)
}

fn behind_to_index(e: GeometryError, index: usize) -> PnPError {
    match e {
        GeometryError::BehindCamera { .. } => PnPError::PointBehindCamera { index },
        other => PnPError::Geometry(other),
    }
}

fn inverse_weight(problem: &PnPProblem, n: usize) -> Result<nalgebra::Matrix2<f64>, PnPError> {
    let cov = problem.observations.keypoints[n].cov;
    let det = cov.determinant();
    if !det.is_finite() || det <= 0.0 {
        return Err(PnPError::DegenerateCovariance { index: n, det });
    }
    Ok(nalgebra::Matrix2::new(cov.m22, -cov.m12, -cov.m21, cov.m11) / det)
}

/// Robust weighted cost at a pose.
pub fn weighted_cost(
    problem: &PnPProblem,
    pose: &Pose6D,
    cfg: &SolverConfig,
) -> Result<f64, PnPError> {
    cfg.validate()?;
    let frame = PoseFrame::new(&pose.euler, &pose.translation);
    let mut cost = 0.0;
    for (n, (point, kp)) in problem
        .model
        .points3d
        .iter()
        .zip(&problem.observations.keypoints)
        .enumerate()
    {
        let pix = frame.project(point, &problem.cam).map_err(|e| behind_to_index(e, n))?;
        let r = kp.mean - pix;
        let e = if cfg.use_weights {
            let w = inverse_weight(problem, n)?;
            (w * r).dot(&r)
        } else {
            r.norm_squared()
        };
        cost += huber(e, cfg.huber_delta);
    }
    Ok(cost)
}

/// Plain unweighted reprojection cost `sum_n ||r_n||^2`.
pub fn reprojection_cost(problem: &PnPProblem, pose: &Pose6D) -> Result<f64, PnPError> {
    let frame = PoseFrame::new(&pose.euler, &pose.translation);
    let mut cost = 0.0;
    for (n, (point, kp)) in problem
        .model
        .points3d
        .iter()
        .zip(&problem.observations.keypoints)
        .enumerate()
    {
        let pix = frame.project(point, &problem.cam).map_err(|e| behind_to_index(e, n))?;
        cost += (kp.mean - pix).norm_squared();
    }
    Ok(cost)
}

#[derive(Clone, Copy)]
enum ObjectiveKind {
    RobustWeighted,
    PlainSquared,
}

struct Evaluated {
    cost: f64,
    gradient: Vector6<f64>,
    hessian: Matrix6<f64>,
}

fn evaluate_objective(
    problem: &PnPProblem,
    y: &Vector6<f64>,
    cfg: &SolverConfig,
    kind: ObjectiveKind,
) -> Result<Evaluated, PnPError> {
    let euler = Vector3::new(y[0], y[1], y[2]);
    let t = Vector3::new(y[3], y[4], y[5]);
    let frame = PoseFrame::new(&euler, &t);
    let mut cost = 0.0;
    let mut gradient = Vector6::zeros();
    let mut hessian = Matrix6::zeros();
    for (n, (point, kp)) in problem
        .model
        .points3d
        .iter()
        .zip(&problem.observations.keypoints)
        .enumerate()
    {
        let (pix, jac) = frame
            .project_with_jacobian(point, &problem.cam)
            .map_err(|e| behind_to_index(e, n))?;
        let r = kp.mean - pix;
        match kind {
            ObjectiveKind::PlainSquared => {
                cost += r.norm_squared();
                gradient += -2.0 * jac.transpose() * r;
                hessian += 2.0 * jac.transpose() * jac;
            }
            ObjectiveKind::RobustWeighted => {
                let (e, wr) = if cfg.use_weights {
                    let w = inverse_weight(problem, n)?;
                    let wr = w * r;
                    (wr.dot(&r), wr)
                } else {
                    (r.norm_squared(), r)
                };
                let (rho1, rho2) = huber_deriv(e, cfg.huber_delta);
                cost += huber(e, cfg.huber_delta);
                // grad e = -2 J' W r; Gauss-Newton curvature of e is 2 J' W J.
                let ge = -2.0 * jac.transpose() * wr;
                gradient += rho1 * ge;
                hessian += rho2 * ge * ge.transpose();
                if cfg.use_weights {
                    let w = inverse_weight(problem, n)?;
                    hessian += rho1 * 2.0 * jac.transpose() * w * jac;
                } else {
                    hessian += rho1 * 2.0 * jac.transpose() * jac;
                }
            }
        }
    }
    Ok(Evaluated { cost, gradient, hessian })
}

fn condition_number_symmetric(m: &Matrix6<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(*m);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in eig.eigenvalues.iter() {
        let a = v.abs();
        lo = lo.min(a);
        hi = hi.max(a);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

const MAX_DAMPING: f64 = 1e16;
const SINGULAR_CONDITION: f64 = 1e14;

fn damped_gauss_newton(
    problem: &PnPProblem,
    init: &Pose6D,
    cfg: &SolverConfig,
    kind: ObjectiveKind,
) -> Result<PnPSolution, PnPError> {
    cfg.validate()?;
    check_initial_depths(problem, init)?;
    let mut y = Vector6::new(
        init.euler.x,
        init.euler.y,
        init.euler.z,
        init.translation.x,
        init.translation.y,
        init.translation.z,
    );
    let mut eval = evaluate_objective(problem, &y, cfg, kind)?;
    let mut damping = cfg.initial_damping;
    let mut iterations = 0usize;
    let grad_ok = |e: &Evaluated| e.gradient.norm() <= cfg.grad_tol * e.cost.max(1.0);
    let mut converged = grad_ok(&eval);

    'outer: while !converged && iterations < cfg.max_iters {
        let diag_floor = 1e-12 * eval.hessian.diagonal().amax().max(1e-300);
        let mut accepted = false;
        loop {
            let mut damped = eval.hessian;
            for i in 0..6 {
                damped[(i, i)] += damping * damped[(i, i)].max(diag_floor);
            }
            let mut cholesky_failed = false;
            match Cholesky::new(damped) {
                Some(ch) => {
                    let step = ch.solve(&(-eval.gradient));
                    let trial_y = y + step;
                    match evaluate_objective(problem, &trial_y, cfg, kind) {
                        Ok(trial) if trial.cost.is_finite() && trial.cost < eval.cost => {
                            y = trial_y;
                            eval = trial;
                            damping = (damping / 10.0).max(1e-15);
                            accepted = true;
                        }
                        // Once the true reduction drops below the evaluation
                        // noise of the cost sum (pixel-scale cancellation in
                        // the residuals puts that near 1e-12 relative), the
                        // computed cost at a better state can round upward.
                        // Accept such steps when the gradient norm drops by
                        // at least 1% so the endgame is not cut short; the
                        // gradient requirement rules out cycling and real
                        // cost increases.
                        Ok(trial)
                            if trial.cost <= eval.cost * (1.0 + 1e-11)
                                && trial.gradient.norm() < 0.99 * eval.gradient.norm() =>
                        {
                            y = trial_y;
                            eval = trial;
                            accepted = true;
                        }
                        // Worse cost or a point swung behind the camera:
                        // reject the trial and stiffen the damping.
                        _ => damping *= 10.0,
                    }
                }
                None => {
                    cholesky_failed = true;
                    damping *= 10.0;
                }
            }
            if accepted {
                break;
            }
            if damping > MAX_DAMPING {
                if cholesky_failed {
                    let condition = condition_number_symmetric(&eval.hessian);
                    if !condition.is_finite() || condition > SINGULAR_CONDITION {
                        return Err(PnPError::SingularNormalEquations { condition });
                    }
                }
                break 'outer; // no step improves the cost within float precision
            }
        }
        iterations += 1;
        converged = grad_ok(&eval);
    }

    let euler = Vector3::new(y[0], y[1], y[2]);
    let translation = Vector3::new(y[3], y[4], y[5]);
    let pose = Pose6D { euler, translation }.canonicalized();
    Ok(PnPSolution {
        pose,
        final_cost: eval.cost,
        iterations,
        gradient_norm: eval.gradient.norm(),
        converged,
    })
}

fn check_initial_depths(problem: &PnPProblem, init: &Pose6D) -> Result<(), PnPError> {
    let frame = PoseFrame::new(&init.euler, &init.translation);
    let behind = problem
        .model
        .points3d
        .iter()
        .filter(|p| frame.camera_point(p).z <= crate::geometry::MIN_DEPTH)
        .count();
    if behind == problem.len() {
        return Err(PnPError::AllPointsBehindCamera);
    }
    Ok(())
}

/// Damped Gauss-Newton on the robust weighted cost from a given initial pose.
///
/// Near a zero-residual optimum the robust cost is quartic in the residual
/// (`rho(e) = e^2/2` with `e` itself quadratic), so its gradient scales like
/// the residual cubed: the default `grad_tol` of 1e-10 corresponds to pixel
/// residuals around 3e-5 and pose errors around 1e-6 of a unit. Callers that
/// need the optimum located to higher accuracy should tighten `grad_tol`
/// (e.g. 1e-18) rather than raise `max_iters` alone.
pub fn solve(
    problem: &PnPProblem,
    init: &Pose6D,
    cfg: &SolverConfig,
) -> Result<PnPSolution, PnPError> {
    damped_gauss_newton(problem, init, cfg, ObjectiveKind::RobustWeighted)
}

/// Damped Gauss-Newton on the plain unweighted objective `sum ||r_n||^2`.
///
/// `huber_delta` and `use_weights` in `cfg` are ignored. The returned
/// solution is a stationary point of the objective differentiated by
/// [`crate::ift::constraint`], which is why pose-region pipelines refine
/// with this before propagating covariance.
pub fn solve_least_squares(
    problem: &PnPProblem,
    init: &Pose6D,
    cfg: &SolverConfig,
) -> Result<PnPSolution, PnPError> {
    damped_gauss_newton(problem, init, cfg, ObjectiveKind::PlainSquared)
}

/// Deterministic coarse initialization.
///
/// Depth comes from the ratio of model spread to image spread in normalized
/// camera coordinates, lateral translation from back-projecting the
/// observation centroid, and the rotation from one orthogonal-Procrustes fit
/// of the model offsets against back-projected directions at the estimated
/// depth. The result always places every model point at positive depth.
pub fn initial_pose(problem: &PnPProblem) -> Result<Pose6D, PnPError> {
    let n = problem.len() as f64;
    let cam = &problem.cam;

    // Normalized image coordinates of the observed means.
    let normalized: Vec<Vector2<f64>> = problem
        .observations
        .keypoints
        .iter()
        .map(|kp| {
            Vector2::new((kp.mean.x - cam.cx) / cam.fx, (kp.mean.y - cam.cy) / cam.fy)
        })
        .collect();
    let img_centroid: Vector2<f64> = normalized.iter().sum::<Vector2<f64>>() / n;
    let img_spread =
        (normalized.iter().map(|q| (q - img_centroid).norm_squared()).sum::<f64>() / n).sqrt();
    if img_spread < 1e-12 {
        return Err(PnPError::DegenerateModel {
            reason: "all observations collapse to one pixel".into(),
        });
    }

    let model_centroid = problem.model.centroid();
    let model_spread = (problem
        .model
        .points3d
        .iter()
        .map(|p| (p - model_centroid).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    // An isotropic cloud with 3D RMS spread s projects to a 2D RMS spread of
    // s * sqrt(2/3) / depth, so the comparable model spread carries that
    // factor; without it the depth estimate is biased ~22% high.
    let depth = model_spread * (2.0f64 / 3.0).sqrt() / img_spread;

    // Back-project each observation to the estimated depth and fit a
    // rotation between centered model points and centered targets (Kabsch).
    let targets: Vec<Vector3<f64>> = normalized
        .iter()
        .map(|q| Vector3::new(q.x * depth, q.y * depth, depth))
        .collect();
    let target_centroid: Vector3<f64> = targets.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    for (p, q) in problem.model.points3d.iter().zip(&targets) {
        cross += (q - target_centroid) * (p - model_centroid).transpose();
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd with u"), svd.v_t.expect("svd with v_t"));
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(f64::MIN_POSITIVE) {
        return Err(PnPError::DegenerateModel {
            reason: "projected correspondences are rank deficient".into(),
        });
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * v_t;

    let mut translation = target_centroid - rot * model_centroid;
    // Guarantee strictly positive depth for every model point.
    let min_depth = problem
        .model
        .points3d
        .iter()
        .map(|p| (rot * p + translation).z)
        .fold(f64::INFINITY, f64::min);
    if min_depth <= 1e-3 {
        translation.z += 1e-3 - min_depth;
    }

    let angles = matrix_to_euler(&rot)?.angles;
    Ok(Pose6D { euler: angles, translation })
}
