use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbd")).args(args).output().expect("spawn sbd")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "sbd failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small_clips(out: &Path) {
    ok(sbd(&[
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
        "clips",
        "--count",
        "2",
        "--frames",
        "200",
        "--width",
        "64",
        "--height",
        "48",
    ]));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_clips(dir.path());
    let sources = dir.path().join("clips");
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(sbd(&[
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "9",
            "synth",
            "--sources",
            sources.to_str().unwrap(),
            "--per-class",
            "3",
        ]));
        manifests.push(fs::read_to_string(out.join("dataset/manifest.jsonl")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    assert_eq!(manifests[0].lines().count(), 1 + 9);
}

#[test]
fn missing_sources_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbd(&[
        "--out",
        dir.path().to_str().unwrap(),
        "synth",
        "--sources",
        dir.path().join("nope").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn snapshot_layers_flags_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"seed": 3, "clips": {"count": 1, "plan": {"width": 32, "height": 32, "frames": 20, "shots": 2}}}"#,
    )
    .unwrap();
    ok(sbd(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "clips",
        "--frames",
        "24",
    ]));
    let snap: Value = serde_json::from_str(&fs::read_to_string(out.join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(snap["seed"], 3);
    assert_eq!(snap["clips"]["count"], 1);
    assert_eq!(snap["clips"]["plan"]["width"], 32);
    assert_eq!(snap["clips"]["plan"]["frames"], 24);
    assert!(out.join("clips/clip000.y4m").exists());
    assert!(!out.join("clips/clip001.y4m").exists());
}

#[test]
fn eval_scores_identical_documents() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth");
    fs::create_dir_all(&truth).unwrap();
    let doc = r#"{"video_id": "v1", "events": [{"label": "sharp", "start_frame": 9, "end_frame": 10, "score": 1.0}]}"#;
    fs::write(truth.join("v1.json"), doc).unwrap();
    let out = dir.path().join("out");
    ok(sbd(&[
        "--out",
        out.to_str().unwrap(),
        "eval",
        "--detections",
        truth.to_str().unwrap(),
        "--annotations",
        truth.to_str().unwrap(),
    ]));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["f_score"], 1.0);
}
