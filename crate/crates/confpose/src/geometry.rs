//! Shared geometric types: cameras, poses, Gaussian keypoints, object
//! models, ellipsoids, and the pinhole projection with its pose Jacobian.
//!
//! Euler angles follow the intrinsic Z-Y-X (yaw-pitch-roll) convention:
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Canonical ranges are yaw and roll
//! in `[-pi, pi)` and pitch in `[-pi/2, pi/2]`; [`matrix_to_euler`] always
//! returns angles in those ranges.

use nalgebra::{Matrix2, Matrix2x6, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera-frame depth at or below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Orthogonality defect above which a matrix is rejected as a rotation.
pub const ROTATION_TOL: f64 = 1e-6;

/// `|pitch|` closer than this to `pi/2` triggers the gimbal-lock path.
pub const GIMBAL_LOCK_TOL: f64 = 1e-6;

const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("camera intrinsics must be finite with positive focal lengths")]
    InvalidIntrinsics,
    #[error("pose components must be finite, yaw/roll in [-pi, pi), pitch in [-pi/2, pi/2]")]
    InvalidPose,
    #[error("keypoint covariance must be finite, symmetric, positive definite")]
    InvalidCovariance,
    #[error("need at least {min} keypoints, got {got}")]
    TooFewKeypoints { min: usize, got: usize },
    #[error("object model needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("object model points are coplanar (singular value ratio {ratio:.3e})")]
    CoplanarModel { ratio: f64 },
    #[error("matrix is not a rotation (defect {defect:.3e})")]
    NotARotation { defect: f64 },
    #[error("point at depth {depth:.3e} is behind the camera")]
    BehindCamera { depth: f64 },
    #[error("ellipsoid needs a symmetric positive definite shape and positive scale")]
    InvalidEllipsoid,
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let all_finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !all_finite || fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Rigid pose: Euler angles `[yaw, pitch, roll]` (intrinsic Z-Y-X, radians)
/// plus a translation in meters.
///
/// Fields are public for plumbing through solvers; [`Pose6D::new`] checks the
/// canonical ranges and [`Pose6D::canonicalized`] wraps an arbitrary Euler
/// triple back into them without changing the rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub euler: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose6D {
    pub fn new(euler: Vector3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let finite = euler.iter().chain(translation.iter()).all(|v| v.is_finite());
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        let in_range = (-pi..pi).contains(&euler.x)
            && (-half_pi..=half_pi).contains(&euler.y)
            && (-pi..pi).contains(&euler.z);
        if !finite || !in_range {
            return Err(GeometryError::InvalidPose);
        }
        Ok(Self { euler, translation })
    }

    /// Rotation matrix for this pose's Euler angles.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        euler_to_matrix(&self.euler)
    }

    /// Equivalent pose with the Euler triple wrapped into canonical ranges.
    pub fn canonicalized(&self) -> Self {
        let dec = matrix_to_euler(&euler_to_matrix(&self.euler))
            .expect("round-tripped rotation is orthonormal");
        Self { euler: dec.angles, translation: self.translation }
    }
}

/// A predicted 2D keypoint: mean position and covariance, both in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKeypoint {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussianKeypoint {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self, GeometryError> {
        let finite = mean.iter().all(|v| v.is_finite()) && cov.iter().all(|v| v.is_finite());
        let scale = cov.amax().max(1.0);
        let symmetric = (cov.m12 - cov.m21).abs() <= 1e-9 * scale;
        let spd = cov.m11 > 0.0 && cov.determinant() > 0.0;
        if !finite || !symmetric || !spd {
            return Err(GeometryError::InvalidCovariance);
        }
        Ok(Self { mean, cov })
    }
}

/// At least four predicted keypoints, index-aligned with an [`ObjectModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKeypointSet {
    pub keypoints: Vec<GaussianKeypoint>,
}

impl GaussianKeypointSet {
    pub fn new(keypoints: Vec<GaussianKeypoint>) -> Result<Self, GeometryError> {
        if keypoints.len() < MIN_CORRESPONDENCES {
            return Err(GeometryError::TooFewKeypoints {
                min: MIN_CORRESPONDENCES,
                got: keypoints.len(),
            });
        }
        Ok(Self { keypoints })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Known 3D keypoint positions in the object frame, in meters.
///
/// Requires at least four points whose centered coordinate matrix has rank
/// three; coplanar models make the pose problem degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub points3d: Vec<Vector3<f64>>,
}

impl ObjectModel {
    pub fn new(points3d: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if points3d.len() < MIN_CORRESPONDENCES {
            return Err(GeometryError::TooFewPoints {
                min: MIN_CORRESPONDENCES,
                got: points3d.len(),
            });
        }
        let centroid: Vector3<f64> = points3d.iter().sum::<Vector3<f64>>() / points3d.len() as f64;
        let mut centered = nalgebra::DMatrix::<f64>::zeros(3, points3d.len());
        for (j, p) in points3d.iter().enumerate() {
            centered.set_column(j, &(p - centroid));
        }
        let singular = centered.svd(false, false).singular_values;
        let ratio = singular[2] / singular[0].max(f64::MIN_POSITIVE);
        if !ratio.is_finite() || ratio <= 1e-10 {
            return Err(GeometryError::CoplanarModel { ratio });
        }
        Ok(Self { points3d })
    }

    pub fn len(&self) -> usize {
        self.points3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3d.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points3d.iter().sum::<Vector3<f64>>() / self.points3d.len() as f64
    }
}

/// Solid ellipsoid `{x : (x - center)' shape^-1 (x - center) <= scale}`.
///
/// `shape` is a covariance-like matrix; `scale` is the squared Mahalanobis
/// boundary. [`Ellipsoid3::new`] requires a strictly positive definite shape,
/// but downstream propagation can legitimately produce positive
/// *semi*-definite shapes (zero predicted uncertainty), so [`contains`]
/// degrades gracefully: a singular region contains exactly its center.
///
/// [`contains`]: Ellipsoid3::contains
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid3 {
    pub center: Vector3<f64>,
    pub shape: Matrix3<f64>,
    pub scale: f64,
}

impl Ellipsoid3 {
    pub fn new(center: Vector3<f64>, shape: Matrix3<f64>, scale: f64) -> Result<Self, GeometryError> {
        let finite = center.iter().all(|v| v.is_finite())
            && shape.iter().all(|v| v.is_finite())
            && scale.is_finite();
        let sym_scale = shape.amax().max(1.0);
        let symmetric = (shape - shape.transpose()).amax() <= 1e-9 * sym_scale;
        if !finite || !symmetric || scale <= 0.0 || shape.cholesky().is_none() {
            return Err(GeometryError::InvalidEllipsoid);
        }
        Ok(Self { center, shape, scale })
    }

    /// Squared Mahalanobis distance of `x` from the center, `None` when the
    /// shape is singular.
    pub fn mahalanobis_sq(&self, x: &Vector3<f64>) -> Option<f64> {
        let diff = x - self.center;
        let chol = self.shape.cholesky()?;
        Some(diff.dot(&chol.solve(&diff)))
    }

    /// Closed-region membership; degenerate shapes contain only the center.
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match self.mahalanobis_sq(x) {
            Some(d2) => d2 <= self.scale,
            None => (x - self.center).amax() == 0.0,
        }
    }
}

/// Decomposed rotation: canonical Euler angles plus a gimbal-lock flag.
///
/// At gimbal lock (`|pitch|` within [`GIMBAL_LOCK_TOL`] of `pi/2`) yaw and
/// roll are not separately observable; yaw is set to zero and roll absorbs
/// the remaining in-plane angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub angles: Vector3<f64>,
    pub gimbal_lock: bool,
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_to_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(euler.x) * rot_y(euler.y) * rot_x(euler.z)
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r < -std::f64::consts::PI {
        r += two_pi;
    } else if r >= std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Recovers canonical Z-Y-X Euler angles from a rotation matrix.
///
/// Rejects matrices whose orthogonality defect exceeds [`ROTATION_TOL`] or
/// whose determinant is not positive. Gimbal lock is reported through the
/// flag, not as an error.
pub fn matrix_to_euler(rot: &Matrix3<f64>) -> Result<EulerAngles, GeometryError> {
    let defect = (rot.transpose() * rot - Matrix3::identity()).norm();
    if !defect.is_finite() || defect >= ROTATION_TOL || rot.determinant() <= 0.0 {
        return Err(GeometryError::NotARotation { defect });
    }
    let sp = (-rot.m31).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let half_pi = std::f64::consts::FRAC_PI_2;
    if half_pi - pitch.abs() < GIMBAL_LOCK_TOL {
        // cos(pitch) ~ 0: only yaw -+ roll is observable. Convention: yaw = 0.
        let roll = if pitch > 0.0 {
            wrap_angle(rot.m12.atan2(rot.m13))
        } else {
            wrap_angle((-rot.m12).atan2(-rot.m13))
        };
        let pitch = if pitch > 0.0 { half_pi } else { -half_pi };
        return Ok(EulerAngles {
            angles: Vector3::new(0.0, pitch, roll),
            gimbal_lock: true,
        });
    }
    let yaw = wrap_angle(rot.m21.atan2(rot.m11));
    let roll = wrap_angle(rot.m32.atan2(rot.m33));
    Ok(EulerAngles {
        angles: Vector3::new(yaw, pitch, roll),
        gimbal_lock: false,
    })
}

/// Precomputed rotation and its three Euler-angle partials for one pose.
pub(crate) struct PoseFrame {
    pub rot: Matrix3<f64>,
    pub drot: [Matrix3<f64>; 3],
    pub translation: Vector3<f64>,
}

impl PoseFrame {
    pub fn new(euler: &Vector3<f64>, translation: &Vector3<f64>) -> Self {
        let rz = rot_z(euler.x);
        let ry = rot_y(euler.y);
        let rx = rot_x(euler.z);
        PoseFrame {
            rot: rz * ry * rx,
            drot: [
                drot_z(euler.x) * ry * rx,
                rz * drot_y(euler.y) * rx,
                rz * ry * drot_x(euler.z),
            ],
            translation: *translation,
        }
    }

    pub fn camera_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rot * point + self.translation
    }

    /// Projection and its 2x6 Jacobian w.r.t. `[yaw, pitch, roll, tx, ty, tz]`.
    pub fn project_with_jacobian(
        &self,
        point: &Vector3<f64>,
        cam: &CameraIntrinsics,
    ) -> Result<(Vector2<f64>, Matrix2x6<f64>), GeometryError> {
        let p = self.camera_point(point);
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        let inv_z = 1.0 / p.z;
        let pix = Vector2::new(cam.fx * p.x * inv_z + cam.cx, cam.fy * p.y * inv_z + cam.cy);
        // d(pixel)/d(camera point)
        let dpix = nalgebra::Matrix2x3::new(
            cam.fx * inv_z,
            0.0,
            -cam.fx * p.x * inv_z * inv_z,
            0.0,
            cam.fy * inv_z,
            -cam.fy * p.y * inv_z * inv_z,
        );
        let mut jac = Matrix2x6::zeros();
        for (j, dr) in self.drot.iter().enumerate() {
            let col = dpix * (dr * point);
            jac.set_column(j, &col);
        }
        for j in 0..3 {
            jac.set_column(3 + j, &dpix.column(j).into_owned());
        }
        Ok((pix, jac))
    }

    pub fn project(
        &self,
        point: &Vector3<f64>,
        cam: &CameraIntrinsics,
    ) -> Result<Vector2<f64>, GeometryError> {
        let p = self.camera_point(point);
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        Ok(Vector2::new(
            cam.fx * p.x / p.z + cam.cx,
            cam.fy * p.y / p.z + cam.cy,
        ))
    }
}

/// Pinhole projection of an object-frame point under a pose.
pub fn project(
    point: &Vector3<f64>,
    pose: &Pose6D,
    cam: &CameraIntrinsics,
) -> Result<Vector2<f64>, GeometryError> {
    PoseFrame::new(&pose.euler, &pose.translation).project(point, cam)
}

/// Analytic 2x6 Jacobian of the projection w.r.t. the pose vector
/// `[yaw, pitch, roll, tx, ty, tz]`.
pub fn projection_jacobian(
    point: &Vector3<f64>,
    pose: &Pose6D,
    cam: &CameraIntrinsics,
) -> Result<Matrix2x6<f64>, GeometryError> {
    PoseFrame::new(&pose.euler, &pose.translation)
        .project_with_jacobian(point, cam)
        .map(|(_, jac)| jac)
}
