//! Command-line interface: generate synthetic datasets, calibrate 2D
//! keypoint confidence regions, and evaluate deterministic (and sampled)
//! 6D pose confidence regions.
//!
//! Exit codes: 0 success, 1 runtime/IO failure, 2 usage error, 3 the
//! calibration set is too small for the requested confidence, 4 malformed
//! dataset, 5 calibration/dataset consistency-hash mismatch. Diagnostic
//! logging is controlled by the `CONFPOSE_LOG` environment variable
//! (standard `error`..`trace` filters).

use clap::{Parser, Subcommand};
use confpose::conformal::ConformalError;
use confpose::files::FilesError;
use confpose::metrics::{MetricsError, Thresholds};
use confpose::pipeline::{
    run_calibrate, run_evaluate, run_generate, EvalMode, EvaluateArgs, PipelineError,
    ScaleMode, SigmaSource,
};
use confpose::synth::{SceneConfig, SynthError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "confpose",
    version,
    about = "Deterministic 6D pose confidence regions from 2D keypoint predictions"
)]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Omit wall-clock timings so outputs are byte-identical across runs.
    #[arg(long, global = true)]
    no_timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON lines.
    Generate {
        /// Number of samples to generate.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,

        /// Global index of the first sample, for disjoint splits.
        #[arg(long, default_value_t = 0)]
        offset: usize,

        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,

        /// Number of model keypoints.
        #[arg(long, default_value_t = 11)]
        n_keypoints: usize,

        /// Side length of the model cube (meters).
        #[arg(long, default_value_t = 0.5)]
        model_extent: f64,

        /// Minimum object depth (meters).
        #[arg(long, default_value_t = 2.0)]
        depth_min: f64,

        /// Maximum object depth (meters).
        #[arg(long, default_value_t = 6.0)]
        depth_max: f64,

        /// Per-axis Euler angle bound (degrees).
        #[arg(long, default_value_t = 60.0)]
        max_rotation_deg: f64,

        /// Minimum per-keypoint noise standard deviation (pixels).
        #[arg(long, default_value_t = 0.3)]
        noise_min: f64,

        /// Maximum per-keypoint noise standard deviation (pixels).
        #[arg(long, default_value_t = 2.0)]
        noise_max: f64,

        /// Ratio of actual noise variance to the stated covariance.
        #[arg(long, default_value_t = 1.0)]
        cov_misspecification: f64,
    },

    /// Score a calibration dataset and store the sorted scores.
    Calibrate {
        /// Calibration dataset (JSON lines).
        #[arg(long)]
        dataset: PathBuf,

        /// Miscoverage level (confidence is 1 - epsilon).
        #[arg(long)]
        epsilon: f64,

        /// Exponent of the covariance-determinant scale factor.
        #[arg(long = "q", value_name = "EXPONENT", default_value_t = 0.25)]
        scale_exponent: f64,

        /// Output calibration path.
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate pose confidence regions against a stored calibration.
    Evaluate {
        /// Evaluation dataset (JSON lines), disjoint from calibration.
        #[arg(long)]
        dataset: PathBuf,

        /// Calibration model produced by `calibrate`.
        #[arg(long = "model")]
        calibration: PathBuf,

        /// Output report path (JSON); columnar CDF/boxplot exports are
        /// written next to it.
        #[arg(long)]
        out: PathBuf,

        /// Which region constructions to run.
        #[arg(long, value_enum, default_value_t = EvalMode::Deterministic)]
        mode: EvalMode,

        /// Ellipsoid boundary scaling.
        #[arg(long, value_enum, default_value_t = ScaleMode::Paper)]
        scale: ScaleMode,

        /// Source of the per-keypoint covariance fed into propagation.
        #[arg(long, value_enum, default_value_t = SigmaSource::Conformal)]
        sigma_source: SigmaSource,

        /// Override the epsilon stored in the calibration file.
        #[arg(long)]
        epsilon: Option<f64>,

        /// Volume thresholds: rotation (degrees cubed), translation (cubic
        /// meters). Regions above them count as uninformative.
        #[arg(
            long,
            num_args = 2,
            value_names = ["TAU_ROT", "TAU_TRANS"],
            default_values_t = [729_000.0, 1.0]
        )]
        thresholds: Vec<f64>,

        /// Sampling-baseline trials per image.
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CONFPOSE_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Stable exit codes for scripting; see the module docs.
fn exit_code(err: &PipelineError) -> u8 {
    match err {
        PipelineError::Files(FilesError::MalformedLine { .. } | FilesError::MissingHeader) => 4,
        PipelineError::Files(FilesError::HashMismatch { .. }) => 5,
        PipelineError::Conformal(ConformalError::EpsilonTooSmall { .. }) => 3,
        PipelineError::Conformal(ConformalError::InvalidEpsilon(_)) => 2,
        PipelineError::Synth(SynthError::InvalidConfig { .. }) => 2,
        PipelineError::Metrics(MetricsError::InvalidThresholds) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Generate {
            count,
            offset,
            out,
            n_keypoints,
            model_extent,
            depth_min,
            depth_max,
            max_rotation_deg,
            noise_min,
            noise_max,
            cov_misspecification,
        } => {
            let config = SceneConfig {
                n_keypoints,
                model_extent,
                depth_range: (depth_min, depth_max),
                max_rotation_deg,
                noise_std_range: (noise_min, noise_max),
                cov_misspecification,
                rng_seed: cli.seed,
            };
            let summary = run_generate(&config, offset, count as usize, &out)?;
            println!(
                "wrote {} samples (offset {}) to {}",
                summary.count,
                summary.offset,
                summary.out.display()
            );
            println!("consistency hash: {}", summary.consistency_hash);
        }
        Command::Calibrate { dataset, epsilon, scale_exponent, out } => {
            let summary = run_calibrate(&dataset, epsilon, scale_exponent, &out)?;
            println!(
                "calibrated on {} images (epsilon {}, scale exponent {})",
                summary.calibration_size, summary.epsilon, summary.scale_exponent
            );
            println!("quantile: {}", summary.quantile);
            println!("wrote {}", summary.out.display());
        }
        Command::Evaluate {
            dataset,
            calibration,
            out,
            mode,
            scale,
            sigma_source,
            epsilon,
            thresholds,
            trials,
        } => {
            let args = EvaluateArgs {
                dataset,
                calibration,
                out: out.clone(),
                mode,
                scale,
                sigma_source,
                epsilon,
                thresholds: Thresholds::new(thresholds[0], thresholds[1])?,
                trials: trials as usize,
                seed: cli.seed,
                jobs: cli.jobs,
                no_timing: cli.no_timing,
            };
            let report = run_evaluate(&args)?;
            println!("evaluated {} images", report.config.n_images);
            if let Some(det) = &report.deterministic {
                println!(
                    "keypoint coverage: {}  rotation coverage: {}  translation coverage: {}",
                    det.eta_kpt, det.eta_rot, det.eta_trans
                );
                println!(
                    "mean volumes: rot {} deg^3 ({} over threshold), trans {} m^3 ({} over threshold)",
                    optional(det.mean_v_rot_deg3),
                    det.out_rot,
                    optional(det.mean_v_trans_m3),
                    det.out_trans
                );
            }
            if let Some(s) = &report.sampling {
                println!(
                    "sampling hulls: rot {} deg^3, trans {} m^3 ({} images under 4 accepted, mean acceptance {})",
                    optional(s.mean_hull_rot_deg3),
                    optional(s.mean_hull_trans_m3),
                    s.insufficient,
                    s.mean_acceptance_rate
                );
            }
            if let Some(c) = &report.comparison {
                println!(
                    "median volume reduction vs sampling: rot {}%, trans {}% (deterministic smaller on {}/{} rot, {}/{} trans)",
                    optional(c.median_volume_reduction_rot_pct),
                    optional(c.median_volume_reduction_trans_pct),
                    (c.frac_rot_det_smaller * c.n_compared as f64).round() as usize,
                    c.n_compared,
                    (c.frac_trans_det_smaller * c.n_compared as f64).round() as usize,
                    c.n_compared
                );
            }
            if !report.failures.is_empty() {
                println!("{} images failed and were recorded in the report", report.failures.len());
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

/// "N/A" for undefined means (e.g. every volume over threshold).
fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), |v| v.to_string())
}
