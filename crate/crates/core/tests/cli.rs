use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn gdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdc")).args(args).env_remove("GDC_WORKERS").output().expect("spawn gdc")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic world in `dir`; returns (features, manifest).
fn world(dir: &Path) -> (PathBuf, PathBuf) {
    let out = gdc(&[
        "gen-synth",
        "--out-dir",
        s(dir),
        "--dim",
        "6",
        "--num-base",
        "10",
        "--points-per-class",
        "40",
        "--seed",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    (dir.join("features.gdcf"), dir.join("manifest.json"))
}

fn evaluate(features: &Path, manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    evaluate_tasks(features, manifest, out, "8", extra)
}

fn evaluate_tasks(features: &Path, manifest: &Path, out: &Path, tasks: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "evaluate",
        "--features",
        s(features),
        "--manifest",
        s(manifest),
        "--out",
        s(out),
        "--tasks",
        tasks,
        "--beta",
        "1",
        "--k",
        "2",
        "--n",
        "20",
        "--epochs",
        "20",
        "--alpha1",
        "1",
        "--alpha2",
        "0",
    ];
    args.extend_from_slice(extra);
    gdc(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_synth_writes_world() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    assert!(features.exists() && manifest.exists());
    let truth = json(&dir.path().join("ground_truth.json"));
    assert!(truth.to_string().contains("sigma"));
}

#[test]
fn evaluate_reports_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    let out = evaluate(&features, &manifest, &a, &["--seed", "3", "--per-task"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("5-way 1-shot"));
    evaluate(&features, &manifest, &b, &["--seed", "3", "--per-task", "--workers", "2"]);
    evaluate(&features, &manifest, &c, &["--seed", "4", "--per-task"]);
    let (ra, rb, rc) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(ra, rb);
    assert_ne!(ra, rc);
    let v = json(&a);
    assert_eq!(v["num_tasks"], 8);
    assert_eq!(v["per_task"].as_array().unwrap().len(), 8);
    let mean = v["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
}

#[test]
fn single_task_has_zero_interval() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    let out_path = dir.path().join("one.json");
    let out = evaluate_tasks(&features, &manifest, &out_path, "1", &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out_path)["ci95"].as_f64(), Some(0.0));
}

#[test]
fn missing_manifest_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = world(dir.path());
    let missing = dir.path().join("nope.json");
    let out_path = dir.path().join("r.json");
    let out = evaluate(&features, &missing, &out_path, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    assert!(!out_path.exists());
}

#[test]
fn bad_config_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    let out_path = dir.path().join("r.json");
    let out = evaluate(&features, &manifest, &out_path, &["--k", "99"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());
    assert_eq!(gdc(&["evaluate", "--bogus"]).status.code(), Some(1));
    assert_eq!(gdc(&["evaluate", "--alpha2", "1", "--alpha2-mult", "2"]).status.code(), Some(1));
}

#[test]
fn worker_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    let out_path = dir.path().join("r.json");
    let out = Command::new(env!("CARGO_BIN_EXE_gdc"))
        .args(["evaluate", "--features", s(&features), "--manifest", s(&manifest), "--out", s(&out_path)])
        .env("GDC_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GDC_WORKERS"));
}

#[test]
fn stats_and_dump_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    let cache = dir.path().join("base.gdcs");
    let out =
        gdc(&["stats", "--features", s(&features), "--manifest", s(&manifest), "--beta", "1", "--out", s(&cache)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = gdc::stats::load_stats_cache(&cache).unwrap();
    assert_eq!(stats.len(), 10);

    let dump = dir.path().join("samples.gdcf");
    let out = gdc(&[
        "dump-samples",
        "--features",
        s(&features),
        "--manifest",
        s(&manifest),
        "--beta",
        "1",
        "--k",
        "2",
        "--n",
        "7",
        "--alpha1",
        "1",
        "--alpha2",
        "0",
        "--out",
        s(&dump),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut f = std::io::BufReader::new(std::fs::File::open(&dump).unwrap());
    let records = gdc::dataset::read_binary(&mut f).unwrap();
    assert_eq!(records.labels.len(), 5 + 5 * 7);
    let origins = records.origins.unwrap();
    assert_eq!(origins.iter().filter(|&&o| o == 0).count(), 5);
}

#[test]
fn tune_logs_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (features, manifest) = world(dir.path());
    let space = dir.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"beta":{"set":[1.0]},"m":{"grid":{"low":0.5,"high":2.0,"step":0.5}},"k":{"set":[2.0,4.0]},
            "n_samples":{"set":[0.0,10.0]},"alpha1":{"set":[0.0,1.0]},"alpha2":{"set":[0.0]},
            "alpha2_mode":"absolute","metrics":["squared_euclidean"],"delta":{"set":[1.0]}}"#,
    )
    .unwrap();
    let log = dir.path().join("trials.jsonl");
    let run = |trials: &str, out: &Path| {
        gdc(&[
            "tune",
            "--features",
            s(&features),
            "--manifest",
            s(&manifest),
            "--space",
            s(&space),
            "--trials",
            trials,
            "--tasks-per-trial",
            "10",
            "--checkpoint",
            "5",
            "--top",
            "1",
            "--novel-tasks",
            "5",
            "--log",
            s(&log),
            "--out",
            s(out),
        ])
    };
    let first = dir.path().join("t1.json");
    let out = run("2", &first);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    let second = dir.path().join("t2.json");
    let out = run("4", &second);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 4);
    assert!(json(&second).to_string().contains("novel_mean"));
}
