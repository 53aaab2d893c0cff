//! End-to-end 6D pose confidence regions.
//!
//! Chains every stage on held-out images: calibrate 2D balls, solve the
//! robust pose, refine with plain least squares, and propagate the
//! calibrated keypoint uncertainty into rotation and translation
//! ellipsoids. Reports how often the ground-truth pose lands inside.

use confpose::conformal::{calibrate, predict_region};
use confpose::ift::region_from_conformal;
use confpose::metrics::{euler_in_ellipsoid, rotation_volume_or_zero_deg3, volume_or_zero};
use confpose::pipeline::REFINE_GRAD_TOL;
use confpose::pnp::{initial_pose, solve, solve_least_squares};
use confpose::synth::{frame_diagonal, generate_offset};
use confpose::{SceneConfig, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epsilon = 0.1;
    let config = SceneConfig { rng_seed: 11, ..SceneConfig::default() };
    let cal = generate_offset(&config, 0, 400)?;
    let eval = generate_offset(&config, 400, 100)?;

    let model = calibrate(
        cal.samples.iter().map(|s| (s.gt_keypoints2d.as_slice(), &s.predicted)),
        0.25,
    )?;

    let refine_cfg = SolverConfig { grad_tol: REFINE_GRAD_TOL, ..SolverConfig::default() };
    let (mut rot_in, mut trans_in) = (0usize, 0usize);
    let (mut v_rot_sum, mut v_trans_sum) = (0.0, 0.0);
    for (i, sample) in eval.samples.iter().enumerate() {
        let region2d = predict_region(&sample.predicted, &model, epsilon, frame_diagonal())?;
        let problem = eval.problem(i)?;
        let robust = solve(&problem, &initial_pose(&problem)?, &SolverConfig::default())?;
        let refined = solve_least_squares(&problem, &robust.pose, &refine_cfg)?;
        // chi-square calibrated boundary: nominal 1-epsilon mass under the
        // propagated Gaussian.
        let region = region_from_conformal(&problem, &refined, &region2d, epsilon, true)?;

        if euler_in_ellipsoid(&sample.gt_pose.euler, &region.rotation) {
            rot_in += 1;
        }
        if region.translation.contains(&sample.gt_pose.translation) {
            trans_in += 1;
        }
        v_rot_sum += rotation_volume_or_zero_deg3(&region.rotation);
        v_trans_sum += volume_or_zero(&region.translation);
    }

    let n = eval.samples.len();
    println!("{n} held-out images at epsilon {epsilon}");
    println!("rotation ellipsoid coverage:    {rot_in}/{n}");
    println!("translation ellipsoid coverage: {trans_in}/{n}");
    println!(
        "mean volumes: {:.1} deg^3 (rotation), {:.3e} m^3 (translation)",
        v_rot_sum / n as f64,
        v_trans_sum / n as f64
    );
    Ok(())
}
