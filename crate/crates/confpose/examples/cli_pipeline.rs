//! The full file-based pipeline, as driven by the command-line tool.
//!
//! Writes a dataset, calibrates from it, evaluates a disjoint split, and
//! prints the report highlights. Everything is keyed by explicit seeds, so
//! re-running reproduces the same files byte for byte (timings are masked
//! here for that reason).

use confpose::metrics::Thresholds;
use confpose::pipeline::{
    run_calibrate, run_evaluate, run_generate, EvalMode, EvaluateArgs, ScaleMode, SigmaSource,
};
use confpose::SceneConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cal_path = dir.path().join("calibration.jsonl");
    let eval_path = dir.path().join("evaluation.jsonl");
    let model_path = dir.path().join("model.json");
    let report_path = dir.path().join("report.json");

    let config = SceneConfig { rng_seed: 1234, ..SceneConfig::default() };
    let gen = run_generate(&config, 0, 300, &cal_path)?;
    println!("dataset: {} samples, hash {}", gen.count, &gen.consistency_hash[..12]);
    run_generate(&config, 300, 100, &eval_path)?;

    let cal = run_calibrate(&cal_path, 0.1, 0.25, &model_path)?;
    println!(
        "calibration: {} scores, quantile {:.4}",
        cal.calibration_size, cal.quantile
    );

    let report = run_evaluate(&EvaluateArgs {
        dataset: eval_path,
        calibration: model_path,
        out: report_path.clone(),
        mode: EvalMode::Both,
        scale: ScaleMode::Paper,
        sigma_source: SigmaSource::Conformal,
        epsilon: None,
        thresholds: Thresholds::default(),
        trials: 300,
        seed: 0,
        jobs: 0,
        no_timing: true,
    })?;

    let det = report.deterministic.as_ref().expect("deterministic summary");
    println!(
        "coverage: keypoints {:.2}, rotation {:.2}, translation {:.2}",
        det.eta_kpt, det.eta_rot, det.eta_trans
    );
    if let Some(cmp) = &report.comparison {
        println!(
            "median volume reduction vs sampling: rotation {}%, translation {}%",
            cmp.median_volume_reduction_rot_pct
                .map_or("N/A".into(), |v| format!("{v:.1}")),
            cmp.median_volume_reduction_trans_pct
                .map_or("N/A".into(), |v| format!("{v:.1}")),
        );
    }

    let exports: Vec<String> = std::fs::read_dir(dir.path())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("report.") && *n != "report.json")
        .collect();
    println!("columnar exports alongside the report: {}", exports.len());
    Ok(())
}
