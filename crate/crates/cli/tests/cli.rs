use std::path::Path;
use std::process::{Command, Output};

fn trace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trace"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"{{
  "dataset": {{"kind": "synthetic", "name": "pinwheel_L", "n": 300}},
  "methods": ["trace-fm", "rectangle"],
  "seeds": [0, 1],
  "time_points": 3,
  "repeats": 2,
  "train": {{"epochs": 3, "batch_size": 64}},
  "regressor_train": {{"epochs": 3, "batch_size": 64}},
  "model": {{"hidden": 8, "blocks": 1}},
  "regressor_model": {{"hidden": 8, "blocks": 1}},
  "volume": {{"points": 256, "test_points": 2}},
  "masks": 1,
  "mask_resolution": 8,
  "ablation": {{"banks": 3, "volume_banks": 0, "cal_points": 40, "reference_multiple": 2}}
}}"#
    );
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let extra: serde_json::Value =
        serde_json::from_str(&format!("{{{}}}", extra.trim_start_matches(','))).unwrap();
    for (k, v) in extra.as_object().unwrap() {
        value[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, value.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn staged_pipeline_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    for cmd in ["gen-data", "train", "calibrate", "eval", "report"] {
        ok(&trace(tmp.path(), &[cmd, "--config", &cfg]));
    }
    let out = tmp.path().join("out");
    assert!(out.join("data/pinwheel_L_seed0.csv").exists());
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("data/pinwheel_L_seed1.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["seed"], 1);
    assert!(out.join("models/seed0/flow.ckpt.json").exists());
    let bank: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("models/seed0/bank_flow.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(bank["R"], 2);
    assert!(bank["draws_sha256"].as_str().unwrap().len() == 64);
    let cal: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("calibration/seed0/trace-fm.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cal["score_kind"], "trace-fm");
    assert_eq!(cal["bank_hash"], bank["draws_sha256"]);
    let scores =
        std::fs::read_to_string(out.join("calibration/seed0/rectangle_scores.csv")).unwrap();
    assert!(scores.starts_with("point_id,score_kind,value\n"));
    assert_eq!(scores.lines().count(), 1 + 68);
    assert!(out.join("eval/masks").read_dir().unwrap().count() >= 4);
    let report =
        std::fs::read_to_string(out.join("reports/pinwheel_L_trace-fm+rectangle_2.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4 + 2);
    assert!(out
        .join("reports/pinwheel_L_trace-fm+rectangle_2.json")
        .exists());
}

#[test]
fn in_memory_report_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = write_config(dir, "");
        ok(&trace(
            dir,
            &["report", "--run", "--config", &cfg, "--seed", "5"],
        ));
    }
    let name = "out/reports/pinwheel_L_trace-fm+rectangle_1.json";
    assert_eq!(
        std::fs::read(a.path().join(name)).unwrap(),
        std::fs::read(b.path().join(name)).unwrap()
    );
}

#[test]
fn validation_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#", "alpha": 1.5"#);
    assert_eq!(
        trace(tmp.path(), &["train", "--config", &cfg])
            .status
            .code(),
        Some(2)
    );

    let good = write_config(tmp.path(), "");
    assert_eq!(
        trace(tmp.path(), &["report", "--config", &good])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        trace(tmp.path(), &["calibrate", "--config", &good])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        trace(tmp.path(), &["ablate", "--config", &good, "--grid", "8x"])
            .status
            .code(),
        Some(2)
    );

    std::fs::write(tmp.path().join("bad.json"), "{ not json").unwrap();
    let bad = tmp.path().join("bad.json");
    assert_eq!(
        trace(tmp.path(), &["train", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let out = Command::new(env!("CARGO_BIN_EXE_trace"))
        .args(["theory-check", "--skip-threshold", "--config", &good])
        .env("TRACE_THREADS", "zero")
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "discretization alone ignores the pool"
    );
    let out = Command::new(env!("CARGO_BIN_EXE_trace"))
        .args(["report", "--run", "--config", &good])
        .env("TRACE_THREADS", "zero")
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#", "regressor_train": {"epochs": 3, "lr": 1e300}"#,
    );
    let out = trace(tmp.path(), &["train", "--config", &cfg, "--seed", "0"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn theory_and_ablation_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = trace(tmp.path(), &["theory-check", "--config", &cfg]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("discretization Linear") && text.contains("threshold stability"));
    assert!(tmp.path().join("out/theory/threshold.json").exists());

    let out = trace(
        tmp.path(),
        &["ablate", "--config", &cfg, "--grid", "4x1,4x2,4x4"],
    );
    ok(&out);
    let rep: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(
            tmp.path()
                .join("out/ablation/pinwheel_L_trace-fm_ablation.json"),
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(rep["rows"].as_array().unwrap().len(), 3);
}
