//! Sampling baseline versus deterministic propagation on one scene.
//!
//! The baseline draws keypoint sets inside the calibrated 2D balls,
//! re-solves the pose per draw, keeps poses whose reprojections stay inside
//! the balls, and takes convex hulls over the accepted Euler angles and
//! translations. This example times it against the single propagation step
//! and compares region volumes.

use confpose::conformal::{calibrate, predict_region};
use confpose::ift::region_from_conformal;
use confpose::metrics::{rotation_volume_or_zero_deg3, volume_or_zero};
use confpose::pipeline::REFINE_GRAD_TOL;
use confpose::pnp::{initial_pose, solve, solve_least_squares};
use confpose::sampler::sample_region;
use confpose::synth::{frame_diagonal, generate_offset};
use confpose::{SceneConfig, SolverConfig};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epsilon = 0.1;
    let trials = 1000;
    let config = SceneConfig { rng_seed: 21, ..SceneConfig::default() };
    let cal = generate_offset(&config, 0, 400)?;
    let eval = generate_offset(&config, 400, 1)?;
    let sample = &eval.samples[0];

    let model = calibrate(
        cal.samples.iter().map(|s| (s.gt_keypoints2d.as_slice(), &s.predicted)),
        0.25,
    )?;
    let region2d = predict_region(&sample.predicted, &model, epsilon, frame_diagonal())?;
    let problem = eval.problem(0)?;

    let t0 = Instant::now();
    let robust = solve(&problem, &initial_pose(&problem)?, &SolverConfig::default())?;
    let refined = solve_least_squares(
        &problem,
        &robust.pose,
        &SolverConfig { grad_tol: REFINE_GRAD_TOL, ..SolverConfig::default() },
    )?;
    let det = region_from_conformal(&problem, &refined, &region2d, epsilon, false)?;
    let det_time = t0.elapsed();

    let t1 = Instant::now();
    let sampled = sample_region(&problem, &region2d, trials, 5)?;
    let samp_time = t1.elapsed();

    println!(
        "deterministic: {:.2} ms -> V_rot {:.3} deg^3, V_trans {:.3e} m^3",
        det_time.as_secs_f64() * 1e3,
        rotation_volume_or_zero_deg3(&det.rotation),
        volume_or_zero(&det.translation)
    );
    println!(
        "sampling ({} trials, {} accepted): {:.0} ms -> V_rot {}, V_trans {}",
        sampled.attempted,
        sampled.accepted,
        samp_time.as_secs_f64() * 1e3,
        sampled
            .hull_rot_volume_deg3
            .map_or("undefined".into(), |v| format!("{v:.3} deg^3")),
        sampled
            .hull_trans_volume_m3
            .map_or("undefined".into(), |v| format!("{v:.3e} m^3")),
    );
    println!(
        "speedup: {:.0}x",
        samp_time.as_secs_f64() / det_time.as_secs_f64()
    );
    Ok(())
}
