use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfsim_core::corpus::load_corpus;
use mfsim_core::engine::persist::read_trajectory;
use mfsim_core::metrics::MetricReport;

fn mfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfsim"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = mfsim(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic corpus: 2 events, 10 steps of 4 agents.
fn corpus(dir: &Path) -> PathBuf {
    let path = dir.join("syn.jsonl");
    ok(&[
        "gen-synthetic",
        "--events",
        "2",
        "--steps",
        "10",
        "--agents",
        "4",
        "--seed",
        "3",
        "--out",
        p(&path),
    ]);
    path
}

#[test]
fn replay_config_reproduces_the_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let syn = corpus(dir.path());
    let out = dir.path().join("t.jsonl");
    ok(&[
        "simulate",
        "--event",
        p(&syn),
        "--batch-size",
        "4",
        "--warmup",
        "10",
        "--out",
        p(&out),
    ]);
    let t = read_trajectory(&out).unwrap();
    let c = load_corpus(&syn).unwrap();
    let texts: Vec<_> = t.scored_actions().map(|a| a.text.clone()).collect();
    let real: Vec<_> = c.events[0]
        .timeline
        .iter()
        .map(|e| e.action.text.clone())
        .collect();
    assert_eq!(texts, real);
}

#[test]
fn self_evaluation_is_perfect_and_exports_series() {
    let dir = tempfile::tempdir().unwrap();
    let syn = corpus(dir.path());
    let run = dir.path().join("r.jsonl");
    ok(&[
        "simulate",
        "--event",
        p(&syn),
        "--batch-size",
        "4",
        "--out",
        p(&run),
    ]);
    let report = dir.path().join("report.json");
    let series = dir.path().join("series.csv");
    ok(&[
        "evaluate",
        "--real",
        p(&run),
        "--gen",
        p(&run),
        "--judge",
        "mock",
        "--emit-series",
        p(&series),
        "--out",
        p(&report),
    ]);
    let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.aggregate.kl, 0.0);
    assert_eq!(r.aggregate.macro_f1, 1.0);
    assert_eq!(r.aggregate.micro_f1, 1.0);
    assert_eq!(r.nll, None);
    let csv = std::fs::read_to_string(&series).unwrap();
    assert!(csv.starts_with("step,source,dimension,label,value\n"));

    let with_nll = dir.path().join("report.csv");
    ok(&[
        "evaluate",
        "--real",
        p(&run),
        "--gen",
        p(&run),
        "--nll",
        "--out",
        p(&with_nll),
    ]);
    let text = std::fs::read_to_string(&with_nll).unwrap();
    let nll = text.lines().last().unwrap();
    assert!(
        nll.starts_with("aggregate,nll,") && nll.len() > "aggregate,nll,".len(),
        "{nll}"
    );
}

#[test]
fn train_toy_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let syn = corpus(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train-toy",
            "--corpus",
            p(&syn),
            "--mode",
            "full-ibtune",
            "--batch-size",
            "4",
            "--iterations",
            "15",
            "--seed",
            "1",
            "--out",
            p(&out),
        ]);
        (
            std::fs::read(out.join("params.json")).unwrap(),
            std::fs::read_to_string(out.join("curve.csv")).unwrap(),
        )
    };
    let (a, curve) = run("a");
    let (b, _) = run("b");
    assert_eq!(a, b);
    assert_eq!(curve.lines().count(), 16);
}

#[test]
fn trained_params_drive_a_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let syn = corpus(dir.path());
    let model = dir.path().join("model");
    ok(&[
        "train-toy",
        "--corpus",
        p(&syn),
        "--batch-size",
        "4",
        "--iterations",
        "5",
        "--out",
        p(&model),
    ]);
    let cfg = dir.path().join("cfg.json");
    let params = model.join("params.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "simulation": {"seed": 3},
            "backend": {"kind": "toy", "params": params},
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("t.jsonl");
    ok(&[
        "simulate",
        "--config",
        p(&cfg),
        "--seed",
        "5",
        "--event",
        p(&syn),
        "--batch-size",
        "4",
        "--out",
        p(&out),
    ]);
    // flag beats file
    assert_eq!(read_trajectory(&out).unwrap().config.seed, 5);
}

#[test]
fn forecast_and_intervene_keep_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let syn = corpus(dir.path());
    let fc = dir.path().join("fc.jsonl");
    ok(&[
        "forecast",
        "--event",
        p(&syn),
        "--batch-size",
        "4",
        "--start",
        "4",
        "--out",
        p(&fc),
    ]);
    let parent = read_trajectory(&fc).unwrap();
    assert_eq!(parent.fork.as_ref().unwrap().fork_step, 4);

    let schedule = dir.path().join("s.json");
    std::fs::write(
        &schedule,
        r#"{"entries": [{"step": 7, "kind": "seed_agents", "actions": ["a3"], "count": 4}]}"#,
    )
    .unwrap();
    let child = dir.path().join("child.jsonl");
    ok(&[
        "intervene",
        "--event",
        p(&syn),
        "--parent",
        p(&fc),
        "--start",
        "6",
        "--schedule",
        p(&schedule),
        "--out",
        p(&child),
    ]);
    let child = read_trajectory(&child).unwrap();
    assert_eq!(child.steps[..7], parent.steps[..7]);
    assert!(child.steps[7].actions.iter().all(|a| a.text == "a3"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mfsim(&["--help"]).status.code(), Some(0));
    assert_eq!(mfsim(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(mfsim(&["frobnicate"]).status.code(), Some(1));
    // missing --out is a usage error
    assert_eq!(mfsim(&["gen-synthetic"]).status.code(), Some(1));
    let missing = dir.path().join("nope.jsonl");
    let out = dir.path().join("t.jsonl");
    assert_eq!(
        mfsim(&["simulate", "--event", p(&missing), "--out", p(&out)])
            .status
            .code(),
        Some(2)
    );
    let syn = corpus(dir.path());
    let err = mfsim(&[
        "simulate",
        "--event",
        p(&syn),
        "--warmup",
        "99",
        "--out",
        p(&out),
    ]);
    assert_eq!(err.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&err.stderr).contains("warmup"));
}
