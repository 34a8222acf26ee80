//! End-to-end runs through the `canon-engine` binary and `run_config`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use canon_bench::config::{BackendType, KindName, RunConfig, Task};
use canon_bench::dataset::{make_synthetic, SyntheticKind};
use canon_bench::run_config;
use canon_core::bridge::stub::StubServer;
use canon_core::energy::make_linear_schedule;
use canon_core::synthetic::UprightBackend;

fn engine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canon-engine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn upright_set(dir: &Path, count: usize) -> PathBuf {
    make_synthetic(&dir.join("data"), SyntheticKind::Upright, count, 24, 0).unwrap()
}

fn banded_set(dir: &Path, count: usize) -> PathBuf {
    make_synthetic(&dir.join("data"), SyntheticKind::Banded { bands: 4 }, count, 16, 0).unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn canon_on_one_image_writes_png_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    upright_set(dir.path(), 1);
    let config = write_config(
        dir.path(),
        r#"
[dataset]
image = "data/images/img00000.png"
class_names = ["red", "green", "blue"]

[transform]
kind = "rotation"
n = 4
"#,
    );
    let out_dir = dir.path().join("out");
    let out = engine(&["canon", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("canonical/img00000.png").is_file());
    let trace = read_json(&out_dir.join("traces/img00000.json"));
    assert_eq!(trace["evaluations"].as_array().unwrap().len(), 4);
    assert_eq!(trace["best_point"], serde_json::json!([0.0]));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["schema"], 1);
    assert_eq!(report["task"], "canon");
    assert_eq!(report["prompts"][0], "a photo of a red");
}

#[test]
fn missing_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[dataset]\nmanifest = \"nope.csv\"\n");
    let out = engine(&["bench-rotation", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[task]\nsed = 3\n");
    let out = engine(&["bench-bo-synthetic", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sed"), "{}", stderr(&out));
}

#[test]
fn conflicting_task_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[task]\nname = \"bench-color\"\n");
    let out = engine(&["bench-rotation", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_remote_exits_3_naming_the_url() {
    let dir = tempfile::tempdir().unwrap();
    upright_set(dir.path(), 2);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let config = write_config(
        dir.path(),
        &format!(
            "[dataset]\nmanifest = \"data/manifest.csv\"\n\n[backend]\ntype = \"remote\"\nurl = \"{url}\"\ntimeout_ms = 500\n"
        ),
    );
    let out = engine(&["bench-rotation", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains(&url), "{}", stderr(&out));
}

#[test]
fn label_without_prompt_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    upright_set(dir.path(), 3);
    let config = write_config(
        dir.path(),
        "[dataset]\nmanifest = \"data/manifest.csv\"\nclass_names = [\"only one\"]\n",
    );
    let out = engine(&["energy-eval", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn empty_dataset_reports_zero_counts_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("manifest.csv"), "id,path,label\n").unwrap();
    let config = write_config(dir.path(), "[dataset]\nmanifest = \"manifest.csv\"\nclass_names = [\"a\"]\n");
    let out = engine(&["bench-rotation", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: dataset is empty"));
    let report = read_json(&dir.path().join("out/bench-rotation/report.json"));
    assert_eq!(report["dataset"]["total"], 0);
    assert_eq!(report["metrics"]["pairs"], 0);
}

#[test]
fn unreadable_image_is_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = upright_set(dir.path(), 3);
    fs::write(dir.path().join("data/images/img00001.png"), b"not a png").unwrap();
    let mut cfg = RunConfig::default();
    cfg.dataset.manifest = Some(manifest);
    cfg.transform.n = Some(4);
    let outcome = run_config(cfg, Task::BenchRotation, &dir.path().join("out")).unwrap();
    let d = &outcome.report.dataset;
    assert_eq!((d.total, d.evaluated, d.skipped), (3, 2, 1));
    assert_eq!(d.skipped_items[0].id, "img00001");
    assert_eq!(outcome.report.metrics["pairs"], 8);
}

#[test]
fn rotation_summary_has_angle_and_accuracy_columns() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = upright_set(dir.path(), 6);
    let mut cfg = RunConfig::default();
    cfg.dataset.manifest = Some(manifest.clone());
    cfg.dataset.prompts_file = Some(manifest.with_file_name("prompts.txt"));
    cfg.task.seed = 17;
    cfg.task.tta_views = 4;
    let outcome = run_config(cfg, Task::BenchRotation, &dir.path().join("out")).unwrap();
    let csv = fs::read_to_string(&outcome.paths.summary_csv).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("angle,baseline_acc,canon_acc"));
    assert!(header.ends_with("config_digest,seed"));
    let first = csv.lines().nth(1).unwrap();
    assert!(first.starts_with("0,"));
    assert!(first.ends_with(&format!("{},17", outcome.report.config_digest)));
    assert_eq!(csv.lines().count(), 1 + 8 + 1);
    let m = &outcome.report.metrics;
    assert_eq!(m["pose_accuracy"], 1.0);
    // Averaging four C8 views mostly sees tilted images, whose decoy logit
    // wins; the canonical image is upright.
    assert!(m["tta_acc"].as_f64().unwrap() < m["canon_acc"].as_f64().unwrap());
    assert_eq!(outcome.report.seeds.global, 17);
}

#[test]
fn color_sweep_spends_35_evaluations_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = banded_set(dir.path(), 6);
    let mut cfg = RunConfig::default();
    cfg.dataset.manifest = Some(manifest.clone());
    cfg.dataset.prompts_file = Some(manifest.with_file_name("prompts.txt"));
    cfg.transform.kind = Some(KindName::Color);
    cfg.backend.kind = BackendType::SyntheticChroma;
    let outcome = run_config(cfg, Task::BenchColor, &dir.path().join("out")).unwrap();
    let m = &outcome.report.metrics;
    assert_eq!(m["budget"], 35);
    assert_eq!(m["evaluations_per_image"], serde_json::json!({"min": 35, "max": 35}));
    assert_eq!(m["cost"]["n_logits_calls"], 6 * 35);
    let lines = fs::read_to_string(&outcome.paths.per_image).unwrap();
    assert_eq!(lines.lines().count(), 6);
}

#[test]
fn contrast_sweep_spends_12_evaluations_and_zero_shift_keeps_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = banded_set(dir.path(), 4);
    let mut cfg = RunConfig::default();
    cfg.dataset.manifest = Some(manifest.clone());
    cfg.dataset.prompts_file = Some(manifest.with_file_name("prompts.txt"));
    cfg.transform.kind = Some(KindName::Contrast);
    cfg.transform.corruption_lower = Some(vec![0.0]);
    cfg.transform.corruption_upper = Some(vec![0.0]);
    cfg.backend.kind = BackendType::SyntheticGamma;
    let outcome = run_config(cfg, Task::BenchContrast, &dir.path().join("out")).unwrap();
    let m = &outcome.report.metrics;
    assert_eq!(m["evaluations_per_image"], serde_json::json!({"min": 12, "max": 12}));
    assert_eq!(m["baseline_acc"], m["canon_acc"]);
}

#[test]
fn gate_eval_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    upright_set(dir.path(), 3);
    let config = write_config(
        dir.path(),
        "[task]\ngate_threshold = 1e9\n\n[dataset]\nmanifest = \"data/manifest.csv\"\nprompts_file = \"data/prompts.txt\"\n",
    );
    let out = engine(&["gate-eval", "--config", config.to_str().unwrap(), "--workers", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&dir.path().join("out/gate-eval/report.json"));
    assert_eq!(report["metrics"]["samples"], 12);
    assert_eq!(report["metrics"]["true_positive_rate"], 0.0);
    assert_eq!(report["metrics"]["true_negative_rate"], 1.0);
}

#[test]
fn bo_synthetic_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[task]\ntrials = 5\nfunctions = [\"contrast-1d\"]\n");
    let out = engine(&["bench-bo-synthetic", "--config", config.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&dir.path().join("out/bench-bo-synthetic/report.json"));
    let summary = &report["metrics"]["objectives"][0];
    assert_eq!(summary["objective"], "contrast-1d");
    assert_eq!(summary["trials"], 5);
    assert_eq!(summary["evaluations_per_trial"], 12);
    assert_eq!(report["seeds"]["global"], 3);
}

#[test]
fn make_synthetic_subcommand_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("set");
    let out = engine(&[
        "make-synthetic",
        "--kind",
        "banded",
        "--count",
        "5",
        "--size",
        "12",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = fs::read_to_string(target.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 6);
    assert_eq!(fs::read_to_string(target.join("prompts.txt")).unwrap().lines().count(), 4);
}

#[test]
fn remote_backend_recovers_pose_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = upright_set(dir.path(), 4);
    let schedule = make_linear_schedule(1000, 0.00085, 0.012).unwrap();
    let server = StubServer::serve_backend(
        Arc::new(UprightBackend),
        schedule,
        vec!["clip:synthetic".into(), "diffusion:synthetic".into()],
    )
    .unwrap();
    let mut cfg = RunConfig::default();
    cfg.dataset.manifest = Some(manifest.clone());
    cfg.dataset.prompts_file = Some(manifest.with_file_name("prompts.txt"));
    cfg.transform.n = Some(4);
    cfg.energy.gamma2 = 1.0;
    cfg.energy.timesteps = vec![100, 500];
    cfg.backend.kind = BackendType::Remote;
    cfg.backend.url = Some(server.url().to_string());
    cfg.backend.request_image_size = (24, 24);
    cfg.backend.timeout_ms = 5_000;
    let outcome = run_config(cfg, Task::BenchRotation, &dir.path().join("out")).unwrap();
    let m = &outcome.report.metrics;
    assert_eq!(m["pose_accuracy"], 1.0);
    assert_eq!(m["cost"]["n_denoise_calls"], 4 * 4 * 4 * 2);
    assert!(outcome.report.backend.contains("remote"), "{}", outcome.report.backend);
    assert!(server.request_count() > 0);
}
