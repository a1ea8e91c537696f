//! Classifier flow: extract features per class, train the plugin, classify.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn okfem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_okfem"))
}

fn run(args: &[&str]) -> Output {
    okfem().args(args).output().expect("spawn okfem")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_w2v(path: &Path, labels: &[&str], seed: u64) {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state as f64 / u64::MAX as f64) as f32 - 0.5
    };
    let mut text = String::new();
    for label in labels {
        text.push_str(label);
        for _ in 0..300 {
            write!(text, " {:.6}", next()).unwrap();
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

/// Label a dataset in place: class by video parity.
fn add_labels(data: &Path, labels: &[&str]) {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for (i, dir) in dirs.iter().enumerate() {
        let ann_path = dir.join("annotations.json");
        let mut ann: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&ann_path).unwrap()).unwrap();
        ann["class_label"] = serde_json::Value::String(labels[i % labels.len()].to_string());
        std::fs::write(&ann_path, serde_json::to_string_pretty(&ann).unwrap()).unwrap();
    }
}

#[test]
fn train_classifier_and_classify() {
    let ws = tempfile::tempdir().unwrap();
    let data = ws.path().join("data");
    let out = run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--videos",
        "6",
        "--frames",
        "24",
        "--events",
        "2",
        "--shape",
        "3,12,12",
        "--seed",
        "77",
    ]);
    assert_ok(&out);
    add_labels(&data, &["walking", "jumping"]);

    let model = ws.path().join("model.json");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "2",
        "--tau",
        "4",
        "--sigma",
        "8",
        "--seed",
        "3",
    ]);
    assert_ok(&out);

    let extracted = ws.path().join("extracted");
    let out = run(&[
        "extract",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--out",
        extracted.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let w2v = ws.path().join("w2v.txt");
    write_w2v(&w2v, &["walking", "jumping"], 5);

    let clf = ws.path().join("clf.json");
    let log = ws.path().join("conv.json");
    let out = run(&[
        "train-classifier",
        "--data",
        extracted.to_str().unwrap(),
        "--w2v",
        w2v.to_str().unwrap(),
        "--out",
        clf.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--epochs",
        "3",
        "--learning-rate",
        "0.005",
        "--seed",
        "9",
    ]);
    assert_ok(&out);
    assert!(clf.is_file());
    let conv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    for entry in conv["entries"].as_array().unwrap() {
        assert!(entry["iterations_used"].as_u64().unwrap() <= 10);
    }

    let pred = ws.path().join("pred.json");
    let out = run(&[
        "classify",
        "--model",
        clf.to_str().unwrap(),
        "--input",
        extracted.join("video_000").to_str().unwrap(),
        "--w2v",
        w2v.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("walking") || stdout.contains("jumping"),
        "{stdout}"
    );
    let preds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&pred).unwrap()).unwrap();
    assert_eq!(preds.as_array().unwrap().len(), 1);

    // Unknown class label in the table is a data error.
    let bad_w2v = ws.path().join("bad.txt");
    write_w2v(&bad_w2v, &["skiing", "rowing"], 6);
    let out = run(&[
        "train-classifier",
        "--data",
        extracted.to_str().unwrap(),
        "--w2v",
        bad_w2v.to_str().unwrap(),
        "--out",
        ws.path().join("clf2.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
