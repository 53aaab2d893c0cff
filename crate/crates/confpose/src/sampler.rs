//! Sampling-plus-convex-hull baseline for pose confidence regions.
//!
//! Instead of linearizing the solver map, this baseline draws keypoint
//! configurations uniformly from the calibrated 2D balls, re-solves the
//! pose for each draw, keeps the poses whose reprojections land inside
//! every ball, and reports the convex hulls of the accepted rotations
//! (Euler angles, degrees) and translations (meters). The hull volumes
//! are directly comparable to the deterministic ellipsoid volumes and
//! serve as the reference the deterministic path is benchmarked against.
//!
//! Everything is deterministic: trial `t` uses an independent,
//! reproducible random stream derived from the caller's seed, so results
//! are bit-identical across runs and independent of scheduling.

use crate::conformal::KeypointConfidenceRegion;
use crate::geometry::{project, GaussianKeypoint, GaussianKeypointSet, Pose6D};
use crate::pnp::{initial_pose, solve_least_squares, PnPError, PnPProblem, SolverConfig};
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("trials must be at least 1")]
    InvalidTrials,
    #[error("region has {region} keypoints but the problem has {problem}")]
    CountMismatch { region: usize, problem: usize },
    #[error("radius {index} is not a finite non-negative number")]
    InvalidRegion { index: usize },
    #[error("convex hull is degenerate: {reason}")]
    DegenerateHull { reason: &'static str },
    #[error(transparent)]
    PnP(#[from] PnPError),
}

/// Accepted pose samples and the volumes of their convex hulls.
///
/// Hull volumes are `None` when fewer than four samples were accepted
/// (no volume is defined), and `Some(0.0)` when enough samples were
/// accepted but they are coplanar — e.g. when the 2D radii shrink to
/// zero and every accepted sample collapses onto the central pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPoseRegion {
    /// Accepted poses, in trial order.
    pub pose_samples: Vec<Pose6D>,
    /// Convex-hull volume of the accepted Euler triples, degrees cubed.
    pub hull_rot_volume_deg3: Option<f64>,
    /// Convex-hull volume of the accepted translations, cubic meters.
    pub hull_trans_volume_m3: Option<f64>,
    pub accepted: usize,
    pub attempted: usize,
}

const DEG_PER_RAD: f64 = 180.0 / PI;

/// Drawn keypoint configurations re-solved into pose samples.
///
/// Per trial, every keypoint is drawn uniformly from its closed 2D ball
/// (`radius * sqrt(u)` at angle `2 pi u'`), a full-set unweighted PnP is
/// solved warm-started from the central solution, and the trial is
/// accepted when every reprojected model point of the solved pose lies
/// inside its own ball.
pub fn sample_region(
    problem: &PnPProblem,
    region: &KeypointConfidenceRegion,
    trials: usize,
    rng_seed: u64,
) -> Result<SampledPoseRegion, SamplerError> {
    if trials == 0 {
        return Err(SamplerError::InvalidTrials);
    }
    if region.centers.len() != problem.len() || region.radii.len() != region.centers.len() {
        return Err(SamplerError::CountMismatch {
            region: region.centers.len().min(region.radii.len()),
            problem: problem.len(),
        });
    }
    for (index, &r) in region.radii.iter().enumerate() {
        if !r.is_finite() || r < 0.0 {
            return Err(SamplerError::InvalidRegion { index });
        }
    }

    let cfg = SolverConfig { grad_tol: 1e-8, ..SolverConfig::default() };
    let init = initial_pose(problem)?;
    let central = solve_least_squares(problem, &init, &cfg)?;

    let mut pose_samples = Vec::new();
    for t in 0..trials {
        // Independent, reproducible stream per trial.
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(t as u64 + 1);

        let keypoints: Vec<GaussianKeypoint> = region
            .centers
            .iter()
            .zip(&region.radii)
            .map(|(center, &radius)| {
                let u: f64 = rng.gen();
                let v: f64 = rng.gen();
                let r = radius * u.sqrt();
                let angle = 2.0 * PI * v;
                let mean = center + Vector2::new(r * angle.cos(), r * angle.sin());
                GaussianKeypoint::new(mean, Matrix2::identity())
                    .expect("identity covariance is symmetric positive definite")
            })
            .collect();
        let observations =
            GaussianKeypointSet::new(keypoints).expect("region cannot be empty here");
        let sampled = PnPProblem::new(problem.model.clone(), observations, problem.cam)?;

        let Ok(solution) = solve_least_squares(&sampled, &central.pose, &cfg) else {
            continue;
        };
        if !solution.converged {
            continue;
        }
        if pose_inside_region(problem, &solution.pose, region) {
            pose_samples.push(solution.pose);
        }
    }
    debug_assert!(pose_samples
        .iter()
        .all(|p| pose_inside_region(problem, p, region)));

    let accepted = pose_samples.len();
    let (hull_rot_volume_deg3, hull_trans_volume_m3) = if accepted >= 4 {
        let eulers_deg: Vec<Vector3<f64>> =
            pose_samples.iter().map(|p| p.euler * DEG_PER_RAD).collect();
        let translations: Vec<Vector3<f64>> =
            pose_samples.iter().map(|p| p.translation).collect();
        (hull_volume_or_zero(&eulers_deg)?, hull_volume_or_zero(&translations)?)
    } else {
        (None, None)
    };

    Ok(SampledPoseRegion {
        pose_samples,
        hull_rot_volume_deg3,
        hull_trans_volume_m3,
        accepted,
        attempted: trials,
    })
}

/// Whether every reprojected model point under `pose` lies inside its
/// closed 2D ball.
fn pose_inside_region(
    problem: &PnPProblem,
    pose: &Pose6D,
    region: &KeypointConfidenceRegion,
) -> bool {
    problem
        .model
        .points3d
        .iter()
        .zip(region.centers.iter().zip(&region.radii))
        .all(|(point, (center, &radius))| match project(point, pose, &problem.cam) {
            Ok(pix) => (pix - center).norm() <= radius,
            Err(_) => false,
        })
}

/// Coplanar accepted samples have a defined (zero) volume; only a true
/// hull failure is an error.
fn hull_volume_or_zero(points: &[Vector3<f64>]) -> Result<Option<f64>, SamplerError> {
    match convex_hull_volume_3d(points) {
        Ok(v) => Ok(Some(v)),
        Err(SamplerError::DegenerateHull { .. }) => Ok(Some(0.0)),
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// Convex hull volume.
// ---------------------------------------------------------------------------

/// Volume of the convex hull of a 3D point set.
///
/// Randomized incremental construction with a deterministic insertion
/// order. Orientation predicates run in f64 behind a relative error
/// filter (1e-12) and fall back to double-double arithmetic when the
/// filter is inconclusive. Requires at least four points spanning three
/// dimensions; coplanarity is detected at 1e-12 of the bounding-box
/// scale. The total volume is assembled from signed tetrahedron
/// determinants against the hull centroid and divided by six once.
pub fn convex_hull_volume_3d(points: &[Vector3<f64>]) -> Result<f64, SamplerError> {
    if points.len() < 4 {
        return Err(SamplerError::DegenerateHull { reason: "fewer than four points" });
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite() || !p.z.is_finite()) {
        return Err(SamplerError::DegenerateHull { reason: "non-finite coordinate" });
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let scale = (hi - lo).norm();
    if scale <= 0.0 {
        return Err(SamplerError::DegenerateHull { reason: "all points coincide" });
    }
    let tol = 1e-12 * scale;

    // Initial simplex by farthest-point selection.
    let i0 = 0usize;
    let i1 = argmax_by(points, |p| (p - points[i0]).norm());
    let span = points[i1] - points[i0];
    if span.norm() <= tol {
        return Err(SamplerError::DegenerateHull { reason: "all points coincide" });
    }
    let i2 = argmax_by(points, |p| (p - points[i0]).cross(&span).norm() / span.norm());
    let line_dist = (points[i2] - points[i0]).cross(&span).norm() / span.norm();
    if line_dist <= tol {
        return Err(SamplerError::DegenerateHull { reason: "points are collinear" });
    }
    let plane_normal = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    let i3 = argmax_by(points, |p| {
        orient3d(&points[i0], &points[i1], &points[i2], p).abs()
    });
    let plane_dist =
        orient3d(&points[i0], &points[i1], &points[i2], &points[i3]).abs() / plane_normal.norm();
    if plane_dist <= tol {
        return Err(SamplerError::DegenerateHull { reason: "points are coplanar" });
    }

    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let orient_outward = |mut f: [usize; 3]| {
        if orient3d(&points[f[0]], &points[f[1]], &points[f[2]], &interior) > 0.0 {
            f.swap(1, 2);
        }
        f
    };
    let mut faces: Vec<[usize; 3]> = vec![
        orient_outward([i0, i1, i2]),
        orient_outward([i0, i1, i3]),
        orient_outward([i0, i2, i3]),
        orient_outward([i1, i2, i3]),
    ];
    let mut alive = vec![true; 4];

    let mut order: Vec<usize> =
        (0..points.len()).filter(|i| ![i0, i1, i2, i3].contains(i)).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5EED));

    for pi in order {
        let p = &points[pi];
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&f| {
                alive[f] && orient3d(&points[faces[f][0]], &points[faces[f][1]], &points[faces[f][2]], p) > 0.0
            })
            .collect();
        if visible.is_empty() {
            continue;
        }
        let visible_edges: BTreeSet<(usize, usize)> = visible
            .iter()
            .flat_map(|&f| {
                let [a, b, c] = faces[f];
                [(a, b), (b, c), (c, a)]
            })
            .collect();
        // Horizon: directed edges of visible faces whose reverse belongs
        // to a hidden face. Iterate in face order for determinism.
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &f in &visible {
            let [a, b, c] = faces[f];
            for (u, v) in [(a, b), (b, c), (c, a)] {
                if !visible_edges.contains(&(v, u)) {
                    horizon.push((u, v));
                }
            }
        }
        for &f in &visible {
            alive[f] = false;
        }
        for (u, v) in horizon {
            faces.push(orient_outward([u, v, pi]));
            alive.push(true);
        }
    }

    // Centroid of the hull vertices, then one signed tetrahedron per face.
    let hull_vertices: BTreeSet<usize> = faces
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .flat_map(|(f, _)| f.iter().copied())
        .collect();
    let centroid = hull_vertices
        .iter()
        .fold(Vector3::zeros(), |acc, &i| acc + points[i])
        / hull_vertices.len() as f64;
    let mut six_volume = 0.0;
    for (f, _) in faces.iter().zip(&alive).filter(|(_, &a)| a) {
        six_volume += orient3d(&points[f[0]], &points[f[1]], &points[f[2]], &centroid);
    }
    Ok(six_volume.abs() / 6.0)
}

fn argmax_by(points: &[Vector3<f64>], score: impl Fn(&Vector3<f64>) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let s = score(p);
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

/// Sign and approximate value of `det [b - a; c - a; d - a]`: positive when
/// `d` is on the counter-clockwise side of triangle `(a, b, c)`. Runs in
/// f64 behind a relative error filter and falls back to double-double
/// arithmetic when the result is too close to zero to trust.
fn orient3d(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let u = b - a;
    let v = c - a;
    let w = d - a;
    let m1 = v.y * w.z - v.z * w.y;
    let m2 = v.x * w.z - v.z * w.x;
    let m3 = v.x * w.y - v.y * w.x;
    let det = u.x * m1 - u.y * m2 + u.z * m3;
    let magnitude = u.x.abs() * ((v.y * w.z).abs() + (v.z * w.y).abs())
        + u.y.abs() * ((v.x * w.z).abs() + (v.z * w.x).abs())
        + u.z.abs() * ((v.x * w.y).abs() + (v.y * w.x).abs());
    if det.abs() > 1e-12 * magnitude {
        return det;
    }
    orient3d_dd(a, b, c, d)
}

/// Double-double (~106-bit) evaluation of the orientation determinant,
/// including exact representation of the coordinate differences.
fn orient3d_dd(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let ux = DD::from_diff(b.x, a.x);
    let uy = DD::from_diff(b.y, a.y);
    let uz = DD::from_diff(b.z, a.z);
    let vx = DD::from_diff(c.x, a.x);
    let vy = DD::from_diff(c.y, a.y);
    let vz = DD::from_diff(c.z, a.z);
    let wx = DD::from_diff(d.x, a.x);
    let wy = DD::from_diff(d.y, a.y);
    let wz = DD::from_diff(d.z, a.z);
    let m1 = vy.mul(wz).sub(vz.mul(wy));
    let m2 = vx.mul(wz).sub(vz.mul(wx));
    let m3 = vx.mul(wy).sub(vy.mul(wx));
    ux.mul(m1).sub(uy.mul(m2)).add(uz.mul(m3)).hi
}

/// Unevaluated double-double number `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy)]
struct DD {
    hi: f64,
    lo: f64,
}

/// Error-free sum of doubles with `|a| >= |b|`.
fn quick_two_sum(a: f64, b: f64) -> DD {
    let s = a + b;
    DD { hi: s, lo: b - (s - a) }
}

/// Error-free sum of arbitrary doubles (Knuth).
fn two_sum(a: f64, b: f64) -> DD {
    let s = a + b;
    let bb = s - a;
    DD { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

/// Split into high and low halves for exact multiplication (Dekker).
fn dekker_split(a: f64) -> (f64, f64) {
    const SPLITTER: f64 = 134_217_729.0; // 2^27 + 1
    let c = SPLITTER * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// Error-free product of doubles.
fn two_prod(a: f64, b: f64) -> DD {
    let p = a * b;
    let (ahi, alo) = dekker_split(a);
    let (bhi, blo) = dekker_split(b);
    let err = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo;
    DD { hi: p, lo: err }
}

impl DD {
    /// Exact difference of two doubles.
    fn from_diff(a: f64, b: f64) -> DD {
        two_sum(a, -b)
    }

    fn add(self, o: DD) -> DD {
        let s = two_sum(self.hi, o.hi);
        quick_two_sum(s.hi, s.lo + self.lo + o.lo)
    }

    fn sub(self, o: DD) -> DD {
        self.add(DD { hi: -o.hi, lo: -o.lo })
    }

    fn mul(self, o: DD) -> DD {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + self.hi * o.lo + self.lo * o.hi)
    }
}
