//! End-to-end command tests: tiny flows, the exit-code contract, and
//! deterministic outputs.

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

fn tiny_synth(dir: &Path, videos: usize, seed: u64) {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--videos",
        &videos.to_string(),
        "--frames",
        "24",
        "--events",
        "2",
        "--shape",
        "3,12,12",
        "--seed",
        &seed.to_string(),
    ]);
    assert_ok(&out);
}

fn train_tiny_model(data: &Path, model: &Path) {
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
}

struct Workspace {
    root: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Workspace {
        Workspace {
            root: tempfile::tempdir().expect("tempdir"),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

#[test]
fn synth_train_extract_summarize_eval_flow() {
    let ws = Workspace::new();
    let data = ws.path("data");
    tiny_synth(&data, 2, 10);
    let model = ws.path("model.json");
    train_tiny_model(&data, &model);

    let extracted = ws.path("extracted");
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
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean keyframe ratio"), "{stdout}");

    let summary = ws.path("summary.json");
    let out = run(&[
        "summarize",
        "--features",
        data.join("video_000/features.fts").to_str().unwrap(),
        "--keyframes",
        extracted.join("video_000/keyframes.json").to_str().unwrap(),
        "--out",
        summary.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let out = run(&[
        "eval-summary",
        "--pred",
        summary.to_str().unwrap(),
        "--reference",
        data.join("video_000/annotations.json").to_str().unwrap(),
    ]);
    assert_ok(&out);
    let score: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&score));
}

#[test]
fn eval_summary_of_identical_summaries_prints_one() {
    let ws = Workspace::new();
    let path = ws.path("s.json");
    std::fs::write(&path, r#"{"num_frames": 40, "shots": [[5, 10], [20, 24]]}"#).unwrap();
    let out = run(&[
        "eval-summary",
        "--pred",
        path.to_str().unwrap(),
        "--reference",
        path.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1.0000");
}

#[test]
fn sampling_mode_selects_the_requested_fraction() {
    let ws = Workspace::new();
    let data = ws.path("data");
    tiny_synth(&data, 1, 21);
    let model = ws.path("model.json");
    train_tiny_model(&data, &model);
    let extracted = ws.path("sampled");
    let out = run(&[
        "extract",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--out",
        extracted.to_str().unwrap(),
        "--sample",
        "random:0.30",
        "--seed",
        "5",
    ]);
    assert_ok(&out);
    let doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(extracted.join("video_000/keyframes.json")).unwrap(),
    )
    .unwrap();
    // floor(0.30 * 24) = 7 sampled frames.
    assert_eq!(doc["keyframe_indices"].as_array().unwrap().len(), 7);

    // Excluding keyframes keeps the count unless the pool runs dry.
    let excluded = ws.path("sampled_ex");
    let out = run(&[
        "extract",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--out",
        excluded.to_str().unwrap(),
        "--sample",
        "random:0.30",
        "--exclude-keyframes",
        "--seed",
        "5",
    ]);
    assert_ok(&out);
    let kf: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.path("sampled_ex/video_000/keyframes.json")).unwrap(),
    )
    .unwrap();
    let plain = run(&[
        "extract",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--out",
        ws.path("plain").to_str().unwrap(),
    ]);
    assert_ok(&plain);
    let gated: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.path("plain/video_000/keyframes.json")).unwrap(),
    )
    .unwrap();
    let gated_set: std::collections::HashSet<u64> = gated["keyframe_indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    for v in kf["keyframe_indices"].as_array().unwrap() {
        assert!(
            !gated_set.contains(&v.as_u64().unwrap()),
            "sampled frame {v} is a gated keyframe"
        );
    }
}

#[test]
fn exit_code_contract() {
    // Usage error: malformed flag value.
    let out = run(&["synth", "--out", "/tmp/x", "--videos", "not-a-number"]);
    assert_eq!(out.status.code(), Some(1));

    // Usage error: bad budget range.
    let ws = Workspace::new();
    let data = ws.path("data");
    tiny_synth(&data, 1, 1);
    let out = run(&[
        "summarize",
        "--features",
        data.join("video_000/features.fts").to_str().unwrap(),
        "--keyframes",
        data.join("video_000/annotations.json").to_str().unwrap(),
        "--out",
        ws.path("s.json").to_str().unwrap(),
        "--budget",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // Data error: corrupted tensor file.
    let bad = ws.path("bad.fts");
    let mut bytes = std::fs::read(data.join("video_000/frames.fts")).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad, &bytes).unwrap();
    let model = ws.path("model.json");
    train_tiny_model(&data, &model);
    let out = run(&[
        "extract",
        "--model",
        model.to_str().unwrap(),
        "--input",
        bad.to_str().unwrap(),
        "--out",
        ws.path("e").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Data error: missing file.
    let out = run(&[
        "eval-summary",
        "--pred",
        ws.path("nope.json").to_str().unwrap(),
        "--reference",
        ws.path("nope.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let ws = Workspace::new();
    let cfg = ws.path("config.json");
    std::fs::write(&cfg, r#"{"seed": 1, "not_a_real_key": 2}"#).unwrap();
    let out = run(&[
        "synth",
        "--out",
        ws.path("d").to_str().unwrap(),
        "--videos",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_real_key"));
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let ws = Workspace::new();
    let cfg = ws.path("config.json");
    std::fs::write(&cfg, r#"{"frames": 16, "events": 1, "shape": "1,8,8"}"#).unwrap();
    let data = ws.path("data");
    let out = run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--videos",
        "1",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert!(out.status.success());
    let ann: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(data.join("video_000/annotations.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(ann["num_frames"], 16);
}

#[test]
fn same_seed_synth_is_byte_identical() {
    let ws = Workspace::new();
    let a = ws.path("a");
    let b = ws.path("b");
    tiny_synth(&a, 2, 33);
    tiny_synth(&b, 2, 33);
    for name in [
        "video_000/frames.fts",
        "video_000/features.fts",
        "video_000/annotations.json",
        "video_001/frames.fts",
    ] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between same-seed runs");
    }
}

#[test]
fn plot_is_deterministic_and_well_formed() {
    let ws = Workspace::new();
    let s1 = ws.path("s1.json");
    let s2 = ws.path("s2.json");
    std::fs::write(&s1, r#"{"num_frames": 60, "shots": [[3, 9], [30, 36]]}"#).unwrap();
    std::fs::write(&s2, r#"{"num_frames": 60, "shots": [[10, 19]]}"#).unwrap();
    let args = [
        "plot",
        "--summaries",
        &format!("{},{}", s1.display(), s2.display()),
        "--labels",
        "ours,reference",
    ];
    let p1 = ws.path("p1.svg");
    let p2 = ws.path("p2.svg");
    let out = run(&[&args[..], &["--out", p1.to_str().unwrap()]].concat());
    assert_ok(&out);
    let out = run(&[&args[..], &["--out", p2.to_str().unwrap()]].concat());
    assert_ok(&out);
    let x = std::fs::read(&p1).unwrap();
    let y = std::fs::read(&p2).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches(r#"fill="black""#).count(), 3);
}

#[test]
fn help_covers_every_flag_mentioned_in_readme() {
    let readme = match std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md"),
    ) {
        Ok(text) => text,
        Err(_) => return, // README not present in this layout
    };
    let mut help_text = String::new();
    for sub in [
        "synth",
        "train",
        "extract",
        "sweep",
        "summarize",
        "eval-summary",
        "train-classifier",
        "classify",
        "plot",
    ] {
        let out = run(&[sub, "--help"]);
        help_text.push_str(&String::from_utf8_lossy(&out.stdout));
    }
    let mut flags: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for token in readme.split(|c: char| c.is_whitespace() || "`,()".contains(c)) {
        if let Some(flag) = token.strip_prefix("--") {
            let clean: String = flag
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '-')
                .collect();
            if !clean.is_empty() {
                flags.insert(format!("--{clean}"));
            }
        }
    }
    assert!(!flags.is_empty(), "README should document flags");
    for flag in flags {
        if flag == "--workspace" || flag == "--test" || flag == "--release" || flag == "--ignored"
        {
            continue; // cargo flags in build instructions
        }
        assert!(
            help_text.contains(&flag),
            "README mentions {flag} but no subcommand help lists it"
        );
    }
}
