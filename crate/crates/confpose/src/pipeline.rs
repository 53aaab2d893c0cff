//! End-to-end pipelines behind the command-line interface.
//!
//! `run_generate` draws a synthetic dataset and writes it as JSON lines.
//! `run_calibrate` scores a calibration dataset and stores the sorted
//! scores with the dataset's consistency hash. `run_evaluate` replays a
//! disjoint dataset through the full chain — calibrated 2D regions, robust
//! pose solve, least-squares refinement, covariance propagation to pose
//! ellipsoids, optionally the sampling baseline — and writes a JSON report
//! plus plain columnar CDF/boxplot exports of the volume distributions.
//!
//! Per-image solver failures are recorded in the report instead of
//! aborting the run. With timing masked, the report and all exports are
//! byte-identical across runs and thread counts: images are processed
//! independently and collected in order, and every random stream is
//! derived from the caller's seed.

use crate::conformal::{
    calibrate, contains, predict_region, quantile, CalibrationModel, ConformalError,
};
use crate::files::{
    self, CalibrationFile, FilesError, LoadedDataset, FORMAT_VERSION,
};
use crate::geometry::GeometryError;
use crate::ift::{
    covariance_from_predictions, covariance_from_region, ellipsoid_scale, kappa_for_epsilon,
    pose_region, IFTError,
};
use crate::metrics::{
    boxplot_stats, euler_in_ellipsoid, rotation_volume_or_zero_deg3, summarize, volume_or_zero,
    EvaluationReport, ImageOutcome, MetricsError, Thresholds,
};
use crate::pnp::{initial_pose, solve, solve_least_squares, PnPProblem, SolverConfig};
use crate::sampler::{sample_region, SamplerError};
use crate::synth::{frame_diagonal, generate_offset, SceneConfig, SynthError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Files(#[from] FilesError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ift(#[from] IFTError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("could not build the thread pool: {0}")]
    ThreadPool(String),
}

/// Which region constructions an evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Deterministic,
    Sampling,
    Both,
}

/// How the ellipsoid boundary is scaled: the raw propagated covariance
/// at the conformal radius ("paper") or the chi-square(3) quantile set
/// ("chi2").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    Paper,
    Chi2,
}

/// Where the per-keypoint covariance fed into propagation comes from:
/// the calibrated conformal radii or the predictor's stated covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSource {
    Conformal,
    Predicted,
}

/// What `run_generate` produced, for console echo.
#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub out: PathBuf,
    pub count: usize,
    pub offset: usize,
    pub consistency_hash: String,
}

pub fn run_generate(
    config: &SceneConfig,
    offset: usize,
    count: usize,
    out: &Path,
) -> Result<GenerateSummary, PipelineError> {
    let ds = generate_offset(config, offset, count)?;
    files::write_dataset(out, &ds)?;
    let model_points: Vec<[f64; 3]> =
        ds.model.points3d.iter().map(|p| [p.x, p.y, p.z]).collect();
    Ok(GenerateSummary {
        out: out.to_path_buf(),
        count,
        offset,
        consistency_hash: files::consistency_hash(&ds.cam, &model_points),
    })
}

/// What `run_calibrate` produced, for console echo.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrateSummary {
    pub out: PathBuf,
    pub calibration_size: usize,
    pub epsilon: f64,
    pub scale_exponent: f64,
    /// The certified radius multiplier at `epsilon`.
    pub quantile: f64,
}

pub fn run_calibrate(
    dataset: &Path,
    epsilon: f64,
    scale_exponent: f64,
    out: &Path,
) -> Result<CalibrateSummary, PipelineError> {
    let loaded = files::read_dataset(dataset)?;
    let model = calibrate(
        loaded
            .samples
            .iter()
            .map(|s| (s.gt_keypoints.as_slice(), &s.predicted)),
        scale_exponent,
    )?;
    // Fail now (not at evaluation time) when the calibration set is too
    // small to certify the requested confidence.
    let alpha = quantile(&model, epsilon)?;
    files::write_calibration(
        out,
        &CalibrationFile {
            format_version: FORMAT_VERSION,
            consistency_hash: loaded.header.consistency_hash.clone(),
            epsilon,
            scale_exponent,
            scores: model.scores().to_vec(),
        },
    )?;
    Ok(CalibrateSummary {
        out: out.to_path_buf(),
        calibration_size: model.len(),
        epsilon,
        scale_exponent,
        quantile: alpha,
    })
}

/// Inputs of `run_evaluate`.
#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub dataset: PathBuf,
    pub calibration: PathBuf,
    pub out: PathBuf,
    pub mode: EvalMode,
    pub scale: ScaleMode,
    pub sigma_source: SigmaSource,
    /// Override of the epsilon stored in the calibration file.
    pub epsilon: Option<f64>,
    pub thresholds: Thresholds,
    /// Sampling-baseline trials per image.
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the default pool.
    pub jobs: usize,
    /// Omit wall-clock timings so outputs are byte-identical across runs.
    pub no_timing: bool,
}

/// Everything `run_evaluate` writes into the report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDoc {
    pub config: ReportConfig,
    /// Aggregate deterministic metrics; absent in sampling-only mode or
    /// when no image survived the deterministic path.
    pub deterministic: Option<EvaluationReport>,
    pub sampling: Option<SamplingSummary>,
    /// Paired deterministic-vs-sampling volume comparison (mode `both`).
    pub comparison: Option<ComparisonSummary>,
    pub per_image: Vec<PerImageRow>,
    pub failures: Vec<FailureRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<TimingBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub dataset: PathBuf,
    pub calibration: PathBuf,
    pub dataset_hash: String,
    pub n_images: usize,
    pub mode: EvalMode,
    pub scale: ScaleMode,
    pub sigma_source: SigmaSource,
    pub epsilon: f64,
    pub epsilon_overridden: bool,
    pub scale_exponent: f64,
    pub calibration_size: usize,
    /// Conformal radius multiplier certified at `epsilon`.
    pub quantile: f64,
    /// Gaussian radius-to-sigma factor `sqrt(-2 ln epsilon)`.
    pub kappa: f64,
    /// Mahalanobis boundary of the reported ellipsoids.
    pub ellipsoid_scale: f64,
    pub thresholds: Thresholds,
    pub solver: SolverConfig,
    pub refine_grad_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSummary {
    pub mean_hull_rot_deg3: Option<f64>,
    pub mean_hull_trans_m3: Option<f64>,
    /// Images with fewer than four accepted samples (no hull volume).
    pub insufficient: usize,
    pub mean_acceptance_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    /// Median of `100 * (1 - v_det / v_hull)` over images where both
    /// volumes are defined and positive; positive means the deterministic
    /// region is smaller.
    pub median_volume_reduction_rot_pct: Option<f64>,
    pub median_volume_reduction_trans_pct: Option<f64>,
    pub frac_rot_det_smaller: f64,
    pub frac_trans_det_smaller: f64,
    pub n_compared: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageRow {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kpt_covered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_rot_deg3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_trans_m3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rot_inside: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trans_inside: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hull_rot_deg3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hull_trans_m3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accepted: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attempted: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRow {
    pub index: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingBlock {
    pub total_ms: f64,
    pub deterministic_ms: f64,
    pub sampling_ms: f64,
    pub mean_deterministic_per_image_ms: f64,
    pub mean_sampling_per_image_ms: f64,
}

/// Gradient tolerance of the least-squares refinement preceding covariance
/// propagation: two orders of magnitude below the propagation stationarity
/// gate, yet far above the gradient evaluation noise floor.
pub const REFINE_GRAD_TOL: f64 = 1e-8;

struct ImageEval {
    row: PerImageRow,
    outcome: Option<ImageOutcome>,
    failure: Option<FailureRow>,
    det_seconds: f64,
    samp_seconds: f64,
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<ReportDoc, PipelineError> {
    let started = Instant::now();
    let loaded = files::read_dataset(&args.dataset)?;
    log::info!(
        "loaded {} images from {} (hash {})",
        loaded.samples.len(),
        args.dataset.display(),
        &loaded.header.consistency_hash[..12]
    );
    let cal = files::read_calibration(&args.calibration)?;
    if cal.consistency_hash != loaded.header.consistency_hash {
        return Err(FilesError::HashMismatch {
            calibration: cal.consistency_hash,
            dataset: loaded.header.consistency_hash.clone(),
        }
        .into());
    }
    let cal_model = CalibrationModel::new(cal.scores.clone(), cal.scale_exponent)?;
    let epsilon = args.epsilon.unwrap_or(cal.epsilon);
    let alpha = quantile(&cal_model, epsilon)?;
    let chi2_calibrated = args.scale == ScaleMode::Chi2;
    let scale = ellipsoid_scale(chi2_calibrated, epsilon)?;
    let kappa = kappa_for_epsilon(epsilon)?;

    let run_images = || -> Vec<ImageEval> {
        loaded
            .samples
            .par_iter()
            .enumerate()
            .map(|(index, sample)| {
                evaluate_image(index, sample, &loaded, &cal_model, epsilon, chi2_calibrated, args)
            })
            .collect()
    };
    let evals: Vec<ImageEval> = if args.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
        pool.install(run_images)
    } else {
        run_images()
    };

    let n_failures = evals.iter().filter(|e| e.failure.is_some()).count();
    if n_failures > 0 {
        log::warn!("{n_failures} of {} images failed a pipeline stage", evals.len());
    }
    let outcomes: Vec<ImageOutcome> =
        evals.iter().filter_map(|e| e.outcome.clone()).collect();
    let deterministic = if args.mode != EvalMode::Sampling && !outcomes.is_empty() {
        Some(summarize(&outcomes, &args.thresholds)?)
    } else {
        None
    };

    let sampling = (args.mode != EvalMode::Deterministic).then(|| {
        let hull_rots: Vec<f64> =
            evals.iter().filter_map(|e| e.row.hull_rot_deg3).collect();
        let hull_trans: Vec<f64> =
            evals.iter().filter_map(|e| e.row.hull_trans_m3).collect();
        let with_counts: Vec<&ImageEval> =
            evals.iter().filter(|e| e.row.attempted.is_some()).collect();
        let insufficient = with_counts
            .iter()
            .filter(|e| e.row.accepted.unwrap_or(0) < 4)
            .count();
        let mean_rate = if with_counts.is_empty() {
            0.0
        } else {
            with_counts
                .iter()
                .map(|e| {
                    e.row.accepted.unwrap_or(0) as f64 / e.row.attempted.unwrap_or(1) as f64
                })
                .sum::<f64>()
                / with_counts.len() as f64
        };
        SamplingSummary {
            mean_hull_rot_deg3: mean(&hull_rots),
            mean_hull_trans_m3: mean(&hull_trans),
            insufficient,
            mean_acceptance_rate: mean_rate,
        }
    });

    let comparison = (args.mode == EvalMode::Both).then(|| {
        let mut rot_reductions = Vec::new();
        let mut trans_reductions = Vec::new();
        let mut rot_smaller = 0usize;
        let mut trans_smaller = 0usize;
        let mut n_compared = 0usize;
        for e in &evals {
            let (Some(vr), Some(vt), Some(hr), Some(ht)) = (
                e.row.v_rot_deg3,
                e.row.v_trans_m3,
                e.row.hull_rot_deg3,
                e.row.hull_trans_m3,
            ) else {
                continue;
            };
            n_compared += 1;
            if vr < hr {
                rot_smaller += 1;
            }
            if vt < ht {
                trans_smaller += 1;
            }
            if hr > 0.0 {
                rot_reductions.push(100.0 * (1.0 - vr / hr));
            }
            if ht > 0.0 {
                trans_reductions.push(100.0 * (1.0 - vt / ht));
            }
        }
        let median = |v: &[f64]| boxplot_stats(v).ok().map(|b| b.median);
        ComparisonSummary {
            median_volume_reduction_rot_pct: median(&rot_reductions),
            median_volume_reduction_trans_pct: median(&trans_reductions),
            frac_rot_det_smaller: fraction(rot_smaller, n_compared),
            frac_trans_det_smaller: fraction(trans_smaller, n_compared),
            n_compared,
        }
    });

    let det_seconds: f64 = evals.iter().map(|e| e.det_seconds).sum();
    let samp_seconds: f64 = evals.iter().map(|e| e.samp_seconds).sum();
    let n_images = loaded.samples.len();
    let timing_ms = (!args.no_timing).then(|| TimingBlock {
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        deterministic_ms: det_seconds * 1e3,
        sampling_ms: samp_seconds * 1e3,
        mean_deterministic_per_image_ms: det_seconds * 1e3 / n_images.max(1) as f64,
        mean_sampling_per_image_ms: samp_seconds * 1e3 / n_images.max(1) as f64,
    });

    let report = ReportDoc {
        config: ReportConfig {
            dataset: args.dataset.clone(),
            calibration: args.calibration.clone(),
            dataset_hash: loaded.header.consistency_hash.clone(),
            n_images,
            mode: args.mode,
            scale: args.scale,
            sigma_source: args.sigma_source,
            epsilon,
            epsilon_overridden: args.epsilon.is_some(),
            scale_exponent: cal.scale_exponent,
            calibration_size: cal_model.len(),
            quantile: alpha,
            kappa,
            ellipsoid_scale: scale,
            thresholds: args.thresholds,
            solver: SolverConfig::default(),
            refine_grad_tol: REFINE_GRAD_TOL,
            trials: (args.mode != EvalMode::Deterministic).then_some(args.trials),
            seed: args.seed,
            jobs: args.jobs,
        },
        deterministic,
        sampling,
        comparison,
        per_image: evals.iter().map(|e| e.row.clone()).collect(),
        failures: evals.iter().filter_map(|e| e.failure.clone()).collect(),
        timing_ms,
    };

    files::write_report(&args.out, &report)?;
    write_volume_exports(&args.out, &report, epsilon)?;
    Ok(report)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn evaluate_image(
    index: usize,
    sample: &crate::files::LoadedSample,
    loaded: &LoadedDataset,
    cal_model: &CalibrationModel,
    epsilon: f64,
    chi2_calibrated: bool,
    args: &EvaluateArgs,
) -> ImageEval {
    let mut row = PerImageRow {
        index,
        kpt_covered: None,
        v_rot_deg3: None,
        v_trans_m3: None,
        rot_inside: None,
        trans_inside: None,
        hull_rot_deg3: None,
        hull_trans_m3: None,
        accepted: None,
        attempted: None,
    };
    let fail = |stage: &str, message: String| {
        Some(FailureRow { index, stage: stage.into(), message })
    };

    let region2d =
        match predict_region(&sample.predicted, cal_model, epsilon, frame_diagonal()) {
            Ok(r) => r,
            Err(e) => {
                return ImageEval {
                    row,
                    outcome: None,
                    failure: fail("predict_region", e.to_string()),
                    det_seconds: 0.0,
                    samp_seconds: 0.0,
                }
            }
        };
    let kpt_covered = match contains(&region2d, &sample.gt_keypoints) {
        Ok(c) => c,
        Err(e) => {
            return ImageEval {
                row,
                outcome: None,
                failure: fail("keypoint_coverage", e.to_string()),
                det_seconds: 0.0,
                samp_seconds: 0.0,
            }
        }
    };
    row.kpt_covered = Some(kpt_covered);

    let problem = match PnPProblem::new(
        loaded.model.clone(),
        sample.predicted.clone(),
        loaded.cam,
    ) {
        Ok(p) => p,
        Err(e) => {
            return ImageEval {
                row,
                outcome: None,
                failure: fail("problem", e.to_string()),
                det_seconds: 0.0,
                samp_seconds: 0.0,
            }
        }
    };

    let mut failure = None;
    let mut outcome = None;
    let mut det_seconds = 0.0;
    if args.mode != EvalMode::Sampling {
        let det_started = Instant::now();
        match deterministic_region(&problem, &region2d, sample, epsilon, chi2_calibrated, args) {
            Ok((v_rot, v_trans, rot_inside, trans_inside)) => {
                row.v_rot_deg3 = Some(v_rot);
                row.v_trans_m3 = Some(v_trans);
                row.rot_inside = Some(rot_inside);
                row.trans_inside = Some(trans_inside);
                outcome = Some(ImageOutcome {
                    kpt_covered,
                    rot_inside,
                    trans_inside,
                    v_rot_deg3: v_rot,
                    v_trans_m3: v_trans,
                    radii: region2d.radii.clone(),
                });
            }
            Err(message) => failure = fail("deterministic", message),
        }
        det_seconds = det_started.elapsed().as_secs_f64();
    }

    let mut samp_seconds = 0.0;
    if args.mode != EvalMode::Deterministic {
        let samp_started = Instant::now();
        match sample_region(
            &problem,
            &region2d,
            args.trials,
            args.seed.wrapping_add(index as u64),
        ) {
            Ok(sampled) => {
                row.hull_rot_deg3 = sampled.hull_rot_volume_deg3;
                row.hull_trans_m3 = sampled.hull_trans_volume_m3;
                row.accepted = Some(sampled.accepted);
                row.attempted = Some(sampled.attempted);
            }
            Err(e @ SamplerError::PnP(_)) => {
                if failure.is_none() {
                    failure = fail("sampling", e.to_string());
                }
            }
            Err(e) => {
                if failure.is_none() {
                    failure = fail("sampling", e.to_string());
                }
            }
        }
        samp_seconds = samp_started.elapsed().as_secs_f64();
    }

    ImageEval { row, outcome, failure, det_seconds, samp_seconds }
}

/// Robust solve, least-squares refinement, covariance propagation, then
/// per-image volumes and ground-truth membership. Errors become recorded
/// per-image failures upstream.
fn deterministic_region(
    problem: &PnPProblem,
    region2d: &crate::conformal::KeypointConfidenceRegion,
    sample: &crate::files::LoadedSample,
    epsilon: f64,
    chi2_calibrated: bool,
    args: &EvaluateArgs,
) -> Result<(f64, f64, bool, bool), String> {
    let stage = |s: &str, e: &dyn std::fmt::Display| format!("{s}: {e}");
    let init = initial_pose(problem).map_err(|e| stage("initial_pose", &e))?;
    let robust = solve(problem, &init, &SolverConfig::default())
        .map_err(|e| stage("solve", &e))?;
    let refine_cfg = SolverConfig { grad_tol: REFINE_GRAD_TOL, ..SolverConfig::default() };
    let refined = solve_least_squares(problem, &robust.pose, &refine_cfg)
        .map_err(|e| stage("refine", &e))?;
    let kp_cov = match args.sigma_source {
        SigmaSource::Conformal => covariance_from_region(region2d, epsilon)
            .map_err(|e: IFTError| stage("covariance", &e))?,
        SigmaSource::Predicted => covariance_from_predictions(&sample.predicted),
    };
    let region = pose_region(problem, &refined, &kp_cov, epsilon, chi2_calibrated)
        .map_err(|e| stage("pose_region", &e))?;
    let v_rot = rotation_volume_or_zero_deg3(&region.rotation);
    let v_trans = volume_or_zero(&region.translation);
    let rot_inside = euler_in_ellipsoid(&sample.gt_pose.euler, &region.rotation);
    let trans_inside = region.translation.contains(&sample.gt_pose.translation);
    Ok((v_rot, v_trans, rot_inside, trans_inside))
}

/// Writes `<stem>.cdf_{rot,trans}_{det,samp}.txt` and matching
/// `.box_...` files next to the report for whichever modes produced
/// volumes.
fn write_volume_exports(
    out: &Path,
    report: &ReportDoc,
    epsilon: f64,
) -> Result<(), FilesError> {
    let stem = out.with_extension("");
    let stem = stem.to_string_lossy();
    let export = |tag: &str, unit: &str, mode: &str, values: &[f64]| -> Result<(), FilesError> {
        if values.is_empty() {
            return Ok(());
        }
        let headers = vec![
            format!("{tag} region volumes, {unit}"),
            format!("mode: {mode}"),
            format!("epsilon: {epsilon}"),
        ];
        files::write_cdf(Path::new(&format!("{stem}.cdf_{tag}_{mode}.txt")), values, &headers)?;
        let stats = boxplot_stats(values).expect("non-empty by guard");
        files::write_boxplot(
            Path::new(&format!("{stem}.box_{tag}_{mode}.txt")),
            &stats,
            &headers,
        )?;
        Ok(())
    };

    let det_rot: Vec<f64> = report.per_image.iter().filter_map(|r| r.v_rot_deg3).collect();
    let det_trans: Vec<f64> = report.per_image.iter().filter_map(|r| r.v_trans_m3).collect();
    let samp_rot: Vec<f64> =
        report.per_image.iter().filter_map(|r| r.hull_rot_deg3).collect();
    let samp_trans: Vec<f64> =
        report.per_image.iter().filter_map(|r| r.hull_trans_m3).collect();
    export("rot", "deg^3", "det", &det_rot)?;
    export("trans", "m^3", "det", &det_trans)?;
    export("rot", "deg^3", "samp", &samp_rot)?;
    export("trans", "m^3", "samp", &samp_trans)?;
    Ok(())
}
