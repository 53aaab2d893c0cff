//! First-order covariance propagation through the pose solver.
//!
//! The solver's output pose is an implicit function of the observed
//! keypoints; differentiating its stationarity condition yields the
//! sensitivity J = dpose/dkeypoints without unrolling the iterations.
//! This example validates the propagated covariance J Sigma_x J' against a
//! Monte Carlo estimate from thousands of perturbed re-solves.

use confpose::geometry::{GaussianKeypoint, GaussianKeypointSet};
use confpose::ift::{pose_jacobian, propagate, KeypointCovariance};
use confpose::pnp::{solve_least_squares, PnPProblem};
use confpose::synth::generate;
use confpose::{SceneConfig, SolverConfig};
use nalgebra::{Matrix2, Matrix6, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SIGMA_PX: f64 = 0.1;
const TRIALS: usize = 2000;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate(&SceneConfig { rng_seed: 3, ..SceneConfig::default() }, 1)?;
    let sample = &dataset.samples[0];

    // Noise-free observations: the least-squares optimum is the gt pose.
    let clean = PnPProblem::new(
        dataset.model.clone(),
        GaussianKeypointSet::new(
            sample
                .gt_keypoints2d
                .iter()
                .map(|m| GaussianKeypoint::new(*m, Matrix2::identity() * SIGMA_PX * SIGMA_PX))
                .collect::<Result<_, _>>()?,
        )?,
        dataset.cam,
    )?;
    let cfg = SolverConfig { grad_tol: 1e-9, ..SolverConfig::default() };
    let central = solve_least_squares(&clean, &sample.gt_pose, &cfg)?;

    // Deterministic path: differentiate, then push the keypoint covariance
    // through the sensitivity.
    let j = pose_jacobian(&clean, &central.pose)?;
    let kp_cov = KeypointCovariance::new(vec![
        Matrix2::identity() * SIGMA_PX * SIGMA_PX;
        clean.len()
    ])?;
    let predicted = propagate(&j, &kp_cov)?;

    // Monte Carlo path: perturb keypoints, re-solve, accumulate moments.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::new(0.0, SIGMA_PX)?;
    let mut mean = Vector6::zeros();
    let mut outer = Matrix6::zeros();
    for _ in 0..TRIALS {
        let perturbed = PnPProblem::new(
            dataset.model.clone(),
            GaussianKeypointSet::new(
                sample
                    .gt_keypoints2d
                    .iter()
                    .map(|m| {
                        let shifted = m
                            + nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                        GaussianKeypoint::new(shifted, Matrix2::identity())
                    })
                    .collect::<Result<_, _>>()?,
            )?,
            dataset.cam,
        )?;
        let sol = solve_least_squares(&perturbed, &central.pose, &cfg)?;
        let y = Vector6::new(
            sol.pose.euler.x,
            sol.pose.euler.y,
            sol.pose.euler.z,
            sol.pose.translation.x,
            sol.pose.translation.y,
            sol.pose.translation.z,
        );
        mean += y;
        outer += y * y.transpose();
    }
    mean /= TRIALS as f64;
    let empirical = outer / TRIALS as f64 - mean * mean.transpose();

    let rel = |a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>| {
        (a - b).norm() / b.norm()
    };
    let emp_rot = empirical.fixed_view::<3, 3>(0, 0).into_owned();
    let emp_trans = empirical.fixed_view::<3, 3>(3, 3).into_owned();
    println!("{TRIALS} re-solves at {SIGMA_PX} px noise");
    println!(
        "rotation block:    propagated vs Monte Carlo Frobenius mismatch {:.1}%",
        100.0 * rel(&predicted.rot_block(), &emp_rot)
    );
    println!(
        "translation block: propagated vs Monte Carlo Frobenius mismatch {:.1}%",
        100.0 * rel(&predicted.trans_block(), &emp_trans)
    );
    println!(
        "predicted translation stds (mm): [{:.3}, {:.3}, {:.3}]",
        1e3 * predicted.trans_block()[(0, 0)].sqrt(),
        1e3 * predicted.trans_block()[(1, 1)].sqrt(),
        1e3 * predicted.trans_block()[(2, 2)].sqrt()
    );
    Ok(())
}
