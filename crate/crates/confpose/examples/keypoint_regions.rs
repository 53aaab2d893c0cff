//! Calibrated 2D keypoint confidence regions.
//!
//! Generates a synthetic dataset, calibrates the nonconformity quantile on
//! one half, and measures empirical coverage of the resulting per-keypoint
//! confidence balls on the held-out half. The guarantee is marginal: the
//! fraction of held-out images whose keypoints ALL fall inside their balls
//! should be at least `1 - epsilon` up to sampling noise.

use confpose::conformal::{calibrate, contains, predict_region, quantile};
use confpose::synth::{frame_diagonal, generate_offset};
use confpose::SceneConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epsilon = 0.1;
    let config = SceneConfig { rng_seed: 42, ..SceneConfig::default() };

    // Disjoint calibration and test splits from one deterministic stream.
    let cal = generate_offset(&config, 0, 500)?;
    let test = generate_offset(&config, 500, 500)?;

    let model = calibrate(
        cal.samples.iter().map(|s| (s.gt_keypoints2d.as_slice(), &s.predicted)),
        0.25,
    )?;
    println!(
        "calibrated on {} images; quantile at epsilon {epsilon}: {:.4}",
        model.len(),
        quantile(&model, epsilon)?
    );

    let mut covered = 0usize;
    let mut radius_sum = 0.0;
    let mut radius_count = 0usize;
    for sample in &test.samples {
        let region = predict_region(&sample.predicted, &model, epsilon, frame_diagonal())?;
        if contains(&region, &sample.gt_keypoints2d)? {
            covered += 1;
        }
        radius_sum += region.radii.iter().sum::<f64>();
        radius_count += region.radii.len();
    }

    println!(
        "held-out coverage: {}/{} = {:.3} (nominal {:.3}; the guarantee is \
         marginal, so single splits fluctuate around it)",
        covered,
        test.samples.len(),
        covered as f64 / test.samples.len() as f64,
        1.0 - epsilon
    );
    println!("mean ball radius: {:.2} px", radius_sum / radius_count as f64);
    Ok(())
}
