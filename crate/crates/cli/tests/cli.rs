use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn empc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_empc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn empc")
}

fn json_file(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `train_log.csv` with the wall-time column dropped.
fn log_without_time(p: &Path) -> Vec<String> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

const SMALL_TRAIN: [&str; 6] = ["--set", "train.iterations=12", "--set", "train.batch_size=8", "--set", "train.episode_len=10"];

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = empc(&["--out", arg(dir.path()), "--set", "train.itrations=5", "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["kind"], "unknown_key");
    assert_eq!(report["key"], "train.itrations");
    assert!(report["message"].as_str().unwrap().contains("train.itrations"));
    assert_eq!(json_file(&dir.path().join("error.json"))["exit_code"], 2);
}

#[test]
fn unknown_key_in_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"eval": {"horizon": [7]}}"#).unwrap();
    let out = empc(&["--out", arg(dir.path()), "--config", arg(&cfg), "oracle"]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["key"], "eval.horizon");
}

#[test]
fn gradcheck_on_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = empc(&["--out", arg(dir.path()), "gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_file(&dir.path().join("gradcheck.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["composite"].as_array().unwrap().len(), 10);
    let run = json_file(&dir.path().join("run.json"));
    assert_eq!(run["seed"], 0);
    assert!(run["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let effective = json_file(&dir.path().join("effective_config.json"));
    assert_eq!(effective["policy"]["transformer"]["d_embed"], 32);
}

#[test]
fn shipped_configs_resolve() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.json", "obstacle.json"] {
        let dir = tempfile::tempdir().unwrap();
        let out = empc(&["--out", arg(dir.path()), "--config", arg(&root.join(name)), "oracle"]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn oracle_validation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = empc(&["--out", arg(dir.path()), "oracle"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_file(&dir.path().join("oracle_validation.json"));
    assert!(v["max_control_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["feasible"], true);
}

#[test]
fn failing_threshold_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = empc(&["--out", arg(dir.path()), "--set", "gradcheck.tol=1e-30", "--set", "gradcheck.seeds=1", "gradcheck"]);
    assert_eq!(out.status.code(), Some(3));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["kind"], "acceptance");
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = empc(&["--out", arg(dir.path()), "eval", "--checkpoint", "/nonexistent/policy.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_at_unseen_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let mut args = vec!["--out", arg(&train_dir), "--seed", "5"];
    args.extend(SMALL_TRAIN);
    args.push("train");
    let out = empc(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = train_dir.join("policy.ckpt");
    assert_eq!(fs::read_to_string(train_dir.join("train_log.csv")).unwrap().lines().count(), 13);

    let eval = |sub: &str| {
        let d = dir.path().join(sub);
        let out = empc(&[
            "--out",
            arg(&d),
            "--set",
            "eval.horizons=[7]",
            "--set",
            "eval.accuracy_horizon=7",
            "--set",
            "eval.first_element_horizons=[7]",
            "--set",
            "eval.accuracy.n_states=3",
            "--set",
            "eval.steps=40",
            "eval",
            "--checkpoint",
            arg(&ckpt),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        d
    };
    let a = eval("eval_a");
    let closed = fs::read_to_string(a.join("closed_loop.csv")).unwrap();
    let rows: Vec<&str> = closed.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("7")));
    let acc = fs::read_to_string(a.join("accuracy.csv")).unwrap();
    assert!(acc.lines().skip(1).all(|r| r.split(',').nth(1) == Some("7")));
    let summary = json_file(&a.join("summary.json"));
    assert_eq!(summary["provenance"]["seed"], 0);
    assert_eq!(summary["provenance"]["checkpoint_id"].as_str().unwrap().len(), 16);

    let b = eval("eval_b");
    for f in ["closed_loop.csv", "accuracy.csv", "trajectories.csv", "long.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let bench = dir.path().join("bench");
    let out = empc(&[
        "--out",
        arg(&bench),
        "--set",
        "eval.latency_horizons=[1,20]",
        "--set",
        "eval.latency_repetitions=5",
        "bench",
        "--checkpoint",
        arg(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(bench.join("latency.csv")).unwrap().lines().count(), 3);
}

#[test]
fn identical_seed_and_config_reproduce_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let d = dir.path().join(sub);
        let mut args = vec!["--out", arg(&d)];
        args.extend(SMALL_TRAIN);
        args.push("train");
        assert_eq!(empc(&args).status.code(), Some(0));
        d
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(log_without_time(&a.join("train_log.csv")), log_without_time(&b.join("train_log.csv")));
    assert_eq!(fs::read(a.join("policy.ckpt")).unwrap(), fs::read(b.join("policy.ckpt")).unwrap());
}

#[test]
fn checkpoint_for_another_plant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let mut args = vec!["--out", arg(&train_dir)];
    args.extend(SMALL_TRAIN);
    args.push("train");
    assert_eq!(empc(&args).status.code(), Some(0));
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/obstacle.json");
    let out = empc(&[
        "--out",
        arg(&dir.path().join("eval")),
        "--config",
        arg(&cfg),
        "eval",
        "--checkpoint",
        arg(&train_dir.join("policy.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
