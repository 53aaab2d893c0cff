//! Black-box tests of the command-line binary: exit codes, printed
//! summaries, and byte-level determinism of every produced file.

use confpose::files::write_dataset;
use confpose::geometry::{GaussianKeypoint, GaussianKeypointSet, ObjectModel, Pose6D};
use confpose::synth::SyntheticSample;
use confpose::{SceneConfig, SyntheticDataset};
use nalgebra::{Matrix2, Vector2, Vector3};
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_confpose"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn count_zero_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--count", "0", "--out", "d.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--count", "1", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(
        &["generate", "--seed", "7", "--count", "100", "--out", "a.jsonl"],
        dir.path(),
    );
    assert!(a.status.success(), "stderr: {}", stderr(&a));
    let b = run(
        &["generate", "--seed", "7", "--count", "100", "--out", "b.jsonl"],
        dir.path(),
    );
    assert!(b.status.success());
    let bytes_a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn default_generation_has_eleven_keypoints_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--count", "3", "--out", "d.jsonl"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    let record: serde_json::Value =
        serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(record["pred_means"].as_array().unwrap().len(), 11);
    assert_eq!(record["gt_keypoints"].as_array().unwrap().len(), 11);
}

/// A dataset whose nonconformity scores are exactly 1, 2, 3, 4, 5: unit
/// covariances make the scale factor 1, and sample `i` displaces one
/// keypoint by `i` pixels.
fn toy_dataset() -> SyntheticDataset {
    let model = ObjectModel::new(vec![
        Vector3::new(-0.1, -0.1, 0.0),
        Vector3::new(0.1, -0.1, 0.0),
        Vector3::new(-0.1, 0.1, 0.0),
        Vector3::new(0.0, 0.0, 0.1),
    ])
    .unwrap();
    let cam = confpose::synth::fixed_camera();
    let config = SceneConfig { n_keypoints: 4, ..SceneConfig::default() };
    let means =
        [[100.0, 100.0], [200.0, 100.0], [100.0, 200.0], [200.0, 200.0]].map(Vector2::from);
    let samples = (1..=5)
        .map(|i| {
            let mut gt = means.to_vec();
            gt[0].x += i as f64;
            SyntheticSample {
                gt_pose: Pose6D::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 3.0)).unwrap(),
                gt_keypoints2d: gt,
                predicted: GaussianKeypointSet::new(
                    means
                        .iter()
                        .map(|m| GaussianKeypoint::new(*m, Matrix2::identity()).unwrap())
                        .collect(),
                )
                .unwrap(),
            }
        })
        .collect();
    SyntheticDataset { config, first_index: 0, cam, model, samples }
}

#[test]
fn calibrate_prints_the_rank_statistic_quantile() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("toy.jsonl");
    write_dataset(&ds_path, &toy_dataset()).unwrap();

    // Scores are {1..5}; at epsilon 0.4 the certified quantile is the
    // floor(5 * 0.4) = 2nd largest score, i.e. 4.
    let out = run(
        &["calibrate", "--dataset", "toy.jsonl", "--epsilon", "0.4", "--out", "m.json"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(
        stdout(&out).contains("quantile: 4"),
        "stdout: {}",
        stdout(&out)
    );
}

#[test]
fn too_small_epsilon_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("toy.jsonl");
    write_dataset(&ds_path, &toy_dataset()).unwrap();
    let out = run(
        &["calibrate", "--dataset", "toy.jsonl", "--epsilon", "0.0001", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn corrupt_line_17_exits_4_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run(
        &["generate", "--seed", "3", "--count", "20", "--out", "d.jsonl"],
        dir.path(),
    );
    assert!(gen.status.success());

    let path = dir.path().join("d.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[16] = r#"{"gt_pose": tru"#;
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = run(
        &["calibrate", "--dataset", "d.jsonl", "--epsilon", "0.2", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("line 17"), "stderr: {}", stderr(&out));
}

#[test]
fn calibration_dataset_hash_mismatch_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    // Different seeds draw different object models, so the content hashes
    // disagree.
    assert!(run(
        &["generate", "--seed", "1", "--count", "30", "--out", "a.jsonl"],
        dir.path()
    )
    .status
    .success());
    assert!(run(
        &["generate", "--seed", "2", "--count", "10", "--out", "b.jsonl"],
        dir.path()
    )
    .status
    .success());
    assert!(run(
        &["calibrate", "--dataset", "a.jsonl", "--epsilon", "0.1", "--out", "m.json"],
        dir.path()
    )
    .status
    .success());

    let out = run(
        &[
            "evaluate",
            "--dataset",
            "b.jsonl",
            "--model",
            "m.json",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(5), "stderr: {}", stderr(&out));
}

#[test]
fn evaluation_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["generate", "--seed", "5", "--count", "40", "--out", "cal.jsonl"],
        dir.path()
    )
    .status
    .success());
    assert!(run(
        &[
            "generate", "--seed", "5", "--count", "15", "--offset", "40", "--out", "eval.jsonl"
        ],
        dir.path()
    )
    .status
    .success());
    assert!(run(
        &["calibrate", "--dataset", "cal.jsonl", "--epsilon", "0.1", "--out", "m.json"],
        dir.path()
    )
    .status
    .success());

    let eval_args = [
        "evaluate",
        "--dataset",
        "eval.jsonl",
        "--model",
        "m.json",
        "--mode",
        "both",
        "--trials",
        "50",
        "--no-timing",
        "--out",
        "r1.json",
    ];
    let first = run(&eval_args, dir.path());
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let mut second_args = eval_args;
    second_args[second_args.len() - 1] = "r2.json";
    let second = run(&second_args, dir.path());
    assert!(second.status.success());

    let r1 = std::fs::read(dir.path().join("r1.json")).unwrap();
    let r2 = std::fs::read(dir.path().join("r2.json")).unwrap();
    assert!(!r1.is_empty());
    assert_eq!(r1, r2);

    // The columnar exports alongside the reports must agree too.
    for suffix in [
        "cdf_rot_det.txt",
        "cdf_trans_det.txt",
        "box_rot_det.txt",
        "box_trans_det.txt",
        "cdf_rot_samp.txt",
        "cdf_trans_samp.txt",
        "box_rot_samp.txt",
        "box_trans_samp.txt",
    ] {
        let e1 = std::fs::read(dir.path().join(format!("r1.{suffix}"))).unwrap();
        let e2 = std::fs::read(dir.path().join(format!("r2.{suffix}"))).unwrap();
        assert_eq!(e1, e2, "export {suffix} differs");
    }
}
