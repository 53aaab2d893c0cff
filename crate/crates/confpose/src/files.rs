//! On-disk formats: JSON-lines datasets, calibration files, JSON reports,
//! and plain columnar exports for CDF/boxplot plotting.
//!
//! A dataset file is one JSON object per line: a header first (format
//! version, conventions, units, camera, model, a consistency hash binding
//! camera and model, and an echo of the generator configuration), then one
//! record per sample. Calibration files store the sorted nonconformity
//! scores next to the same consistency hash so an evaluation can refuse
//! calibrations produced for a different camera/model. All numbers are
//! written with serde_json's shortest-round-trip float encoding, so
//! writing and re-reading is bit-exact and repeated runs are
//! byte-identical.

use crate::geometry::{
    CameraIntrinsics, GaussianKeypoint, GaussianKeypointSet, ObjectModel, Pose6D,
};
use crate::metrics::BoxplotStats;
use crate::synth::{SceneConfig, SyntheticDataset, FRAME_SIZE};
use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const EULER_CONVENTION: &str = "ZYX-intrinsic";

#[derive(Debug, Error)]
pub enum FilesError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("file is empty; expected a dataset header line")]
    MissingHeader,
    #[error(
        "consistency hash mismatch: calibration was built for {calibration} \
         but the dataset hashes to {dataset}"
    )]
    HashMismatch { calibration: String, dataset: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Units of every quantity in a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub angles: String,
    pub translation: String,
    pub image: String,
}

impl Default for Units {
    fn default() -> Self {
        Self { angles: "rad".into(), translation: "m".into(), image: "px".into() }
    }
}

/// Echo of how the dataset was generated, for provenance and resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEcho {
    pub seed: u64,
    pub offset: usize,
    pub count: usize,
    pub config: SceneConfig,
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub euler_convention: String,
    pub units: Units,
    pub image_size: [f64; 2],
    pub camera: CameraIntrinsics,
    pub model_points: Vec<[f64; 3]>,
    /// SHA-256 over the canonical JSON of camera and model.
    pub consistency_hash: String,
    pub generator: GeneratorEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub euler: [f64; 3],
    pub translation: [f64; 3],
}

/// One sample line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub gt_pose: PoseRecord,
    pub gt_keypoints: Vec<[f64; 2]>,
    pub pred_means: Vec<[f64; 2]>,
    /// Symmetric 2x2 covariances stored as `[a, b, c]` for `[[a, b], [b, c]]`.
    pub pred_covs: Vec<[f64; 3]>,
}

/// A dataset read back into solver-ready types.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub header: DatasetHeader,
    pub cam: CameraIntrinsics,
    pub model: ObjectModel,
    pub samples: Vec<LoadedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub gt_pose: Pose6D,
    pub gt_keypoints: Vec<Vector2<f64>>,
    pub predicted: GaussianKeypointSet,
}

/// Stored calibration: the sorted scores plus everything needed to check
/// it is being applied to the dataset family it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub format_version: u32,
    pub consistency_hash: String,
    /// Miscoverage level the calibration was requested at (overridable).
    pub epsilon: f64,
    pub scale_exponent: f64,
    /// Nonconformity scores in descending order.
    pub scores: Vec<f64>,
}

/// SHA-256 hex digest of the canonical JSON encoding of camera and model.
pub fn consistency_hash(camera: &CameraIntrinsics, model_points: &[[f64; 3]]) -> String {
    #[derive(Serialize)]
    struct HashInput<'a> {
        camera: &'a CameraIntrinsics,
        model_points: &'a [[f64; 3]],
    }
    let json = serde_json::to_string(&HashInput { camera, model_points })
        .expect("plain structs always serialize");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn model_point_arrays(model: &ObjectModel) -> Vec<[f64; 3]> {
    model.points3d.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Writes a synthetic dataset as JSON lines (header first).
pub fn write_dataset(path: &Path, ds: &SyntheticDataset) -> Result<(), FilesError> {
    let model_points = model_point_arrays(&ds.model);
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        euler_convention: EULER_CONVENTION.into(),
        units: Units::default(),
        image_size: [FRAME_SIZE, FRAME_SIZE],
        camera: ds.cam,
        consistency_hash: consistency_hash(&ds.cam, &model_points),
        model_points,
        generator: GeneratorEcho {
            seed: ds.config.rng_seed,
            offset: ds.first_index,
            count: ds.samples.len(),
            config: ds.config.clone(),
        },
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in &ds.samples {
        let record = SampleRecord {
            gt_pose: PoseRecord {
                euler: [s.gt_pose.euler.x, s.gt_pose.euler.y, s.gt_pose.euler.z],
                translation: [
                    s.gt_pose.translation.x,
                    s.gt_pose.translation.y,
                    s.gt_pose.translation.z,
                ],
            },
            gt_keypoints: s.gt_keypoints2d.iter().map(|p| [p.x, p.y]).collect(),
            pred_means: s.predicted.keypoints.iter().map(|k| [k.mean.x, k.mean.y]).collect(),
            pred_covs: s
                .predicted
                .keypoints
                .iter()
                .map(|k| [k.cov[(0, 0)], k.cov[(0, 1)], k.cov[(1, 1)]])
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn malformed(line: usize, reason: impl ToString) -> FilesError {
    FilesError::MalformedLine { line, reason: reason.to_string() }
}

/// Reads and validates a JSON-lines dataset. Every defect names the
/// offending 1-based line.
pub fn read_dataset(path: &Path) -> Result<LoadedDataset, FilesError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or(FilesError::MissingHeader)?;
    let header: DatasetHeader =
        serde_json::from_str(&first?).map_err(|e| malformed(1, e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(malformed(
            1,
            format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    if header.euler_convention != EULER_CONVENTION {
        return Err(malformed(
            1,
            format!(
                "unsupported euler_convention {:?} (expected {EULER_CONVENTION:?})",
                header.euler_convention
            ),
        ));
    }
    let cam = CameraIntrinsics::new(
        header.camera.fx,
        header.camera.fy,
        header.camera.cx,
        header.camera.cy,
    )
    .map_err(|e| malformed(1, e))?;
    let model = ObjectModel::new(
        header.model_points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
    )
    .map_err(|e| malformed(1, e))?;
    let expected_hash = consistency_hash(&cam, &header.model_points);
    if header.consistency_hash != expected_hash {
        return Err(malformed(
            1,
            format!(
                "consistency hash {} does not match camera and model ({})",
                header.consistency_hash, expected_hash
            ),
        ));
    }

    let mut samples = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(&text).map_err(|e| malformed(line_no, e))?;
        samples.push(load_sample(record, model.len()).map_err(|reason| malformed(line_no, reason))?);
    }
    if samples.len() != header.generator.count {
        return Err(malformed(
            samples.len() + 1,
            format!(
                "header promises {} samples but the file holds {}",
                header.generator.count,
                samples.len()
            ),
        ));
    }
    Ok(LoadedDataset { header, cam, model, samples })
}

fn load_sample(record: SampleRecord, n_keypoints: usize) -> Result<LoadedSample, String> {
    if record.gt_keypoints.len() != n_keypoints
        || record.pred_means.len() != n_keypoints
        || record.pred_covs.len() != n_keypoints
    {
        return Err(format!(
            "sample must carry exactly {n_keypoints} keypoints (got {} gt, {} means, {} covs)",
            record.gt_keypoints.len(),
            record.pred_means.len(),
            record.pred_covs.len()
        ));
    }
    let gt_pose = Pose6D::new(
        Vector3::new(record.gt_pose.euler[0], record.gt_pose.euler[1], record.gt_pose.euler[2]),
        Vector3::new(
            record.gt_pose.translation[0],
            record.gt_pose.translation[1],
            record.gt_pose.translation[2],
        ),
    )
    .map_err(|e| e.to_string())?;
    let gt_keypoints: Vec<Vector2<f64>> =
        record.gt_keypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    let mut keypoints = Vec::with_capacity(n_keypoints);
    for (k, (mean, cov)) in record.pred_means.iter().zip(&record.pred_covs).enumerate() {
        let kp = GaussianKeypoint::new(
            Vector2::new(mean[0], mean[1]),
            Matrix2::new(cov[0], cov[1], cov[1], cov[2]),
        )
        .map_err(|e| format!("keypoint {k}: {e}"))?;
        keypoints.push(kp);
    }
    let predicted = GaussianKeypointSet::new(keypoints).map_err(|e| e.to_string())?;
    Ok(LoadedSample { gt_pose, gt_keypoints, predicted })
}

/// Writes a calibration file as pretty JSON.
pub fn write_calibration(path: &Path, cal: &CalibrationFile) -> Result<(), FilesError> {
    let mut text = serde_json::to_string_pretty(cal)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads and validates a calibration file.
pub fn read_calibration(path: &Path) -> Result<CalibrationFile, FilesError> {
    let text = fs::read_to_string(path)?;
    let cal: CalibrationFile = serde_json::from_str(&text).map_err(|e| malformed(1, e))?;
    if cal.format_version != FORMAT_VERSION {
        return Err(malformed(
            1,
            format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                cal.format_version
            ),
        ));
    }
    if !(cal.epsilon > 0.0 && cal.epsilon < 1.0) {
        return Err(malformed(1, format!("epsilon {} outside (0, 1)", cal.epsilon)));
    }
    Ok(cal)
}

/// Writes any serializable report as pretty JSON.
pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<(), FilesError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes sorted samples one per line, preceded by `# `-prefixed header
/// comments (units, mode). Consumable by any plotting tool.
pub fn write_cdf(path: &Path, values: &[f64], header_lines: &[String]) -> Result<(), FilesError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut out = BufWriter::new(fs::File::create(path)?);
    for h in header_lines {
        writeln!(out, "# {h}")?;
    }
    for v in sorted {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes boxplot statistics as labeled columnar text with `# ` headers.
pub fn write_boxplot(
    path: &Path,
    stats: &BoxplotStats,
    header_lines: &[String],
) -> Result<(), FilesError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for h in header_lines {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "q1 {}", stats.q1)?;
    writeln!(out, "median {}", stats.median)?;
    writeln!(out, "q3 {}", stats.q3)?;
    writeln!(out, "whisker_lo {}", stats.whisker_lo)?;
    writeln!(out, "whisker_hi {}", stats.whisker_hi)?;
    for v in &stats.outliers {
        writeln!(out, "outlier {v}")?;
    }
    out.flush()?;
    Ok(())
}
