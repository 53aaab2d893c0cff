//! Single-shot robust pose estimation.
//!
//! Builds one synthetic scene with noisy keypoints, initializes a pose from
//! scratch, and runs the damped Gauss-Newton solver on the robust weighted
//! reprojection objective. Prints the recovered pose against ground truth.

use confpose::pnp::{initial_pose, reprojection_cost, solve};
use confpose::synth::generate;
use confpose::{SceneConfig, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SceneConfig {
        noise_std_range: (0.2, 0.8),
        rng_seed: 7,
        ..SceneConfig::default()
    };
    let dataset = generate(&config, 1)?;
    let sample = &dataset.samples[0];
    let problem = dataset.problem(0)?;

    let init = initial_pose(&problem)?;
    println!(
        "initial guess: rms reprojection error {:.2} px",
        (reprojection_cost(&problem, &init)? / problem.len() as f64).sqrt()
    );

    let solution = solve(&problem, &init, &SolverConfig::default())?;
    println!(
        "converged: {} after {} iterations (gradient norm {:.2e})",
        solution.converged, solution.iterations, solution.gradient_norm
    );

    let gt = &sample.gt_pose;
    let est = &solution.pose;
    let rot_err = (est.euler - gt.euler).norm();
    let trans_err = (est.translation - gt.translation).norm();
    println!("ground truth euler (rad): {:.5?}", gt.euler.as_slice());
    println!("estimated    euler (rad): {:.5?}", est.euler.as_slice());
    println!("rotation error: {rot_err:.2e} rad, translation error: {trans_err:.2e} m");
    println!(
        "final rms reprojection error: {:.3} px",
        (reprojection_cost(&problem, est)? / problem.len() as f64).sqrt()
    );
    Ok(())
}
