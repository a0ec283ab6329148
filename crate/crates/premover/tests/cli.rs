use std::path::Path;
use std::process::{Command, Output};

use premover_core::metrics::{fmt_sig4, MetricsTable};
use serde_json::Value;

fn premover(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_premover"));
    c.args(args).env_remove("PREMOVER_SEED");
    if let Some(s) = env_seed {
        c.env("PREMOVER_SEED", s);
    }
    c.output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(
        &p,
        r#"{"suites": ["goal"], "tasks_per_suite": 1, "train_episodes": "0..1",
            "calibration_episodes": "1..2", "eval_episodes": "2..3", "train": {"epochs": 1}}"#,
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

fn summary_seed(out: &Path) -> u64 {
    let v: Value = serde_json::from_slice(&std::fs::read(out.join("train_summary.json")).unwrap()).unwrap();
    v["config"]["benchmark_seed"].as_u64().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(premover(&["train", "--bogus"], None).status.code(), Some(2));
    assert_eq!(premover(&["fly"], None).status.code(), Some(2));
    assert_eq!(premover(&["eval", "--episodes", "9..3"], None).status.code(), Some(2));
    assert_eq!(premover(&["eval", "--alpha", "1.5"], None).status.code(), Some(2));
    assert_eq!(premover(&["--help"], None).status.code(), Some(0));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"no_such_field": 1}"#).unwrap();
    let out = premover(&["train", "--config", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let missing = premover(
        &["train", "--config", dir.path().join("absent.json").to_str().unwrap()],
        None,
    );
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn eval_without_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = premover(&["eval", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = premover(
        &[
            "train",
            "--config",
            &cfg,
            "--out",
            blocker.join("sub").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seed_comes_from_flag_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let st = premover(&["train", "--config", &cfg, "--out", a.to_str().unwrap()], Some("5"));
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert_eq!(summary_seed(&a), 5);

    let b = dir.path().join("b");
    let st = premover(
        &["train", "--config", &cfg, "--seed", "7", "--out", b.to_str().unwrap()],
        Some("5"),
    );
    assert!(st.status.success());
    assert_eq!(summary_seed(&b), 7);

    assert_eq!(
        premover(&["train", "--config", &cfg], Some("abc")).status.code(),
        Some(2)
    );
}

#[test]
fn eval_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    assert!(premover(&["train", "--config", &cfg, "--out", o], None)
        .status
        .success());
    let st = premover(&["eval", "--config", &cfg, "--out", o, "--alpha", "0.4"], None);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for f in [
        "checkpoint.json",
        "train_log.jsonl",
        "metrics.json",
        "metrics.csv",
        "metrics.txt",
        "episodes.jsonl",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics: Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["schema"], "premover-metrics-v1");
    assert_eq!(metrics["alpha"], 0.4);
    let episodes = std::fs::read_to_string(out.join("episodes.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 4);
    for line in episodes.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "premover-episode-v1");
        let steps = v["total_steps"].as_u64().unwrap() as f64;
        assert_eq!(v["wall_seconds"].as_f64().unwrap(), steps / 13.0);
    }
    let ckpt: Value = serde_json::from_slice(&std::fs::read(out.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["schema"], "premover-ckpt-v1");

    let table: MetricsTable = serde_json::from_value(metrics["table"].clone()).unwrap();
    let text = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    let mut lines = text.lines();
    lines.next();
    for (suite, line) in table.suites.iter().zip(lines) {
        let mut words = line.split_whitespace();
        assert_eq!(words.next(), Some(suite.as_str()));
        for st in &table.settings {
            let c = table.get(suite, st).unwrap();
            for v in [
                Some(c.success_pct),
                Some(c.wall_all_seconds),
                c.wall_succ_seconds,
                c.wall_all_pct_of_full,
            ] {
                assert_eq!(words.next().unwrap(), fmt_sig4(v), "{suite} {st}");
            }
        }
        assert_eq!(words.next(), None);
    }
}
