use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_patchcert"));
    // keep the caller's environment from leaking into flag resolution
    for (k, _) in std::env::vars() {
        if k.starts_with("PATCHCERT_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn patchcert");
    if !out.status.success() {
        eprintln!("stdout: {}", String::from_utf8_lossy(&out.stdout));
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn generate(dir: &Path, images: usize, classes: usize) -> (PathBuf, PathBuf) {
    let out = run(bin().args(["gen-synthetic", "--seed", "9", "--images"]).arg(images.to_string())
        .arg("--classes").arg(classes.to_string())
        .arg("--out").arg(dir));
    assert!(out.status.success());
    (dir.join("model.json"), dir.join("manifest.jsonl"))
}

fn common(cmd: &mut Command, model: &Path, manifest: &Path, out: &Path) {
    cmd.arg("--model").arg(model).arg("--manifest").arg(manifest).arg("--out").arg(out);
}

#[test]
fn certify_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 8, 3);
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let mut cmd = bin();
        cmd.args(["certify", "--masks", "3x3", "--patch", "2", "--thresholds", "standard", "--workers", workers]);
        common(&mut cmd, &model, &manifest, &out);
        assert!(run(&mut cmd).status.success());
        outputs.push(
            ["certify.jsonl", "curves.csv", "summary.json"]
                .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
    let first = String::from_utf8(outputs[0][0].clone()).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["attacker_mode"], "worst");
    assert_eq!(rec["query_count"], 45);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 2, 2);
    let mut cmd = bin();
    cmd.args(["certify", "--masks", "0x3"]);
    common(&mut cmd, &model, &manifest, &dir.path().join("o"));
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mask budget"));

    let mut cmd = bin();
    cmd.args(["certify", "--patch", "20"]);
    common(&mut cmd, &model, &manifest, &dir.path().join("o"));
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rows axis"));

    let dup = dir.path().join("dup.jsonl");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let line = text.lines().nth(1).unwrap();
    std::fs::write(&dup, format!("{text}{line}\n")).unwrap();
    let mut cmd = bin();
    cmd.arg("infer");
    common(&mut cmd, &model, &dup, &dir.path().join("o"));
    assert_eq!(run(&mut cmd).status.code(), Some(2));
}

#[test]
fn verify_passes_and_flags_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 4, 3);
    let mut cmd = bin();
    cmd.args(["verify", "--masks", "3x3", "--patch", "2", "--thresholds", "standard"]);
    common(&mut cmd, &model, &manifest, &dir.path().join("ok"));
    assert_eq!(run(&mut cmd).status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ok/bound_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["assignments"].as_u64().unwrap() > 0);

    let mut cmd = bin();
    cmd.args(["verify", "--masks", "3x3", "--patch", "2", "--thresholds", "standard", "--mutate", "tp-lower"]);
    common(&mut cmd, &model, &manifest, &dir.path().join("bad"));
    assert_eq!(run(&mut cmd).status.code(), Some(3));
}

#[test]
fn environment_overrides_flags_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 2, 2);
    let out = dir.path().join("o");
    let mut cmd = bin();
    cmd.args(["certify", "--thresholds", "standard"])
        .env("PATCHCERT_MASKS", "2x2")
        .env("PATCHCERT_PATCH", "3")
        .env("PATCHCERT_ATTACKER", "fn");
    common(&mut cmd, &model, &manifest, &out);
    assert!(run(&mut cmd).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["masks"], serde_json::json!([2, 2]));
    assert_eq!(summary["config"]["attacker"], "fn");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 2, 2);
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"masks":[2,2],"patch":{"pixels":{"p1":2,"p2":2}},"thresholds":"standard","seed":4}"#).unwrap();
    let out = dir.path().join("o");
    let mut cmd = bin();
    cmd.args(["infer", "--masks", "3x3"]).arg("--config").arg(&cfg);
    common(&mut cmd, &model, &manifest, &out);
    assert!(run(&mut cmd).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["masks"], serde_json::json!([3, 3]));
    assert_eq!(summary["seed"], 4);
    let preds = std::fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 2 * 10);
}

#[test]
fn single_class_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 3, 1);
    let out = dir.path().join("o");
    let mut cmd = bin();
    cmd.args(["certify", "--masks", "2x2", "--patch", "2", "--thresholds", "standard"]);
    common(&mut cmd, &model, &manifest, &out);
    assert!(run(&mut cmd).status.success());
    let text = std::fs::read_to_string(out.join("certify.jsonl")).unwrap();
    for line in text.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["kappa"].as_array().unwrap().len(), 1);
        let bounded = r["tp_lower"].as_u64().unwrap() + r["fn_upper"].as_u64().unwrap();
        assert_eq!(bounded, r["truth"].as_str().unwrap().matches('1').count() as u64);
    }
}

#[test]
fn sweep_writes_one_row_per_grid_point_and_setting() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = generate(&dir.path().join("data"), 4, 2);
    let out = dir.path().join("o");
    let mut cmd = bin();
    cmd.args(["sweep", "--thresholds", "standard", "--mask-grid", "1,2x2", "--patch-grid", "2%,3"]);
    common(&mut cmd, &model, &manifest, &out);
    assert!(run(&mut cmd).status.success());
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "masks,patch,setting,ap");
    assert_eq!(lines.count(), 2 * 2 * 4);
}
